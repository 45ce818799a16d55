//! P1 finite elements on triangles: stiffness and mass assembly, Dirichlet
//! elimination, and the three boundary-value problems used for mesh motion
//! (harmonic extension, mixed biharmonic extension, and the mask function).

mod banded;
mod extension;
mod solve;
mod sparse;

pub use banded::{reverse_cuthill_mckee, BandedLu};
pub use extension::{
    biharmonic_extension, harmonic_extension, mask_field, mask_field_with, weighted_source,
    BiharmonicSolver, ExtensionOperator, HarmonicSolver, MaskSource,
};
pub use solve::{conjugate_gradient, solve_spd, CgStats, DirichletBC, ReducedSpd, CG_TOLERANCE};
pub use sparse::CsrMatrix;

use crate::mesh::Mesh;

/// Element stiffness `K_ij = (b_i b_j + c_i c_j) / (4A)` of a P1 triangle.
pub fn element_stiffness(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    let area4 = 2.0 * crate::mesh::signed_area2(p[0], p[1], p[2]);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b[i] * b[j] + c[i] * c[j]) / area4;
        }
    }
    k
}

/// Consistent element mass `A/12 [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn element_mass(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let a12 = 0.5 * crate::mesh::signed_area2(p[0], p[1], p[2]) / 12.0;
    let mut m = [[a12; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 2.0 * a12;
    }
    m
}

fn assemble(mesh: &Mesh, element: impl Fn([[f64; 2]; 3]) -> [[f64; 3]; 3]) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.n_cells());
    for (c, cell) in mesh.cells().iter().enumerate() {
        let e = element(mesh.cell_points(c));
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((cell[i], cell[j], e[i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_vertices(), triplets).expect("cell indices validated by Mesh")
}

/// Global P1 stiffness matrix of `-Δ`.
pub fn assemble_stiffness(mesh: &Mesh) -> CsrMatrix {
    assemble(mesh, element_stiffness)
}

/// Global consistent P1 mass matrix.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    assemble(mesh, element_mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::testing::{single_triangle, unit_square};
    use crate::oracles;

    #[test]
    fn unit_triangle_element_matrices() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let k = element_stiffness(tri);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        assert_eq!(k, expected);
        // hand-integrated oracle agrees as well
        let ko = oracles::p1_stiffness_by_quadrature(tri);
        for i in 0..3 {
            for j in 0..3 {
                assert!((ko[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
        let m = element_mass(tri);
        let a = 0.5 / 12.0;
        assert_eq!(m, [[2.0 * a, a, a], [a, 2.0 * a, a], [a, a, 2.0 * a]]);
    }

    #[test]
    fn stiffness_kernel_and_symmetry() {
        for mesh in [single_triangle(), unit_square(5)] {
            let k = assemble_stiffness(&mesh);
            assert!(k.max_asymmetry() <= 1e-12);
            let ones = vec![1.0; mesh.n_vertices()];
            assert!(k.mul_vec(&ones).iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn mass_sums_to_area() {
        let m = assemble_mass(&unit_square(1));
        assert!((m.total() - 1.0).abs() <= 1e-12);
        let mesh = unit_square(7);
        let m = assemble_mass(&mesh);
        assert!(m.max_asymmetry() <= 1e-12);
        assert!((m.total() - mesh.area()).abs() <= 1e-10);
    }

    #[test]
    fn solve_spd_constant_on_mass() {
        let mesh = single_triangle();
        let m = assemble_mass(&mesh);
        let bc = DirichletBC::new(vec![0, 1, 2], vec![1.0; 3]).unwrap();
        assert_eq!(solve_spd(&m, &[0.0; 3], &bc).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn solve_spd_reproduces_linear_function() {
        let mesh = unit_square(6);
        let k = assemble_stiffness(&mesh);
        let bnd = mesh.boundary_vertices();
        let lin = |p: [f64; 2]| p[0] + 2.0 * p[1];
        let bc = DirichletBC::new(
            bnd.clone(),
            bnd.iter().map(|&i| lin(mesh.vertex(i))).collect(),
        )
        .unwrap();
        let x = solve_spd(&k, &vec![0.0; mesh.n_vertices()], &bc).unwrap();
        for i in 0..mesh.n_vertices() {
            assert!((x[i] - lin(mesh.vertex(i))).abs() <= 1e-10);
        }
        for (&i, &v) in bc.indices.iter().zip(&bc.values) {
            assert_eq!(x[i], v);
        }
    }

    #[test]
    fn solve_spd_matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in [5, 8] {
            let b_mat: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let a: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            (0..n).map(|k| b_mat[i][k] * b_mat[j][k]).sum::<f64>()
                                + if i == j { n as f64 } else { 0.0 }
                        })
                        .collect()
                })
                .collect();
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sparse = CsrMatrix::from_dense(&a).unwrap();
            let x = solve_spd(&sparse, &rhs, &DirichletBC::none()).unwrap();
            let xo = oracles::dense_solve(&oracles::DenseSystem::new(a, rhs).unwrap()).unwrap();
            for (p, q) in x.iter().zip(&xo) {
                assert!((p - q).abs() <= 1e-10, "{p} vs {q}");
            }
        }
    }
}
