use serde::{Deserialize, Serialize};

use super::{
    assemble_mass, assemble_stiffness, reverse_cuthill_mckee, BandedLu, CsrMatrix, ReducedSpd,
};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryDeformation, Mesh, NodalField};

/// A mesh motion operator `g -> u` on a fixed mesh.
pub trait ExtensionOperator {
    fn extend(&self, g: &BoundaryDeformation) -> Result<NodalField>;
}

/// Componentwise discrete Laplace problem with `u = g` on every boundary
/// vertex; the reduced stiffness matrix is built once per mesh.
#[derive(Debug, Clone)]
pub struct HarmonicSolver {
    n_vertices: usize,
    boundary: Vec<usize>,
    system: ReducedSpd,
}

impl HarmonicSolver {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let boundary = mesh.boundary_vertices();
        let system = ReducedSpd::new(&assemble_stiffness(mesh), &boundary)?;
        Ok(Self {
            n_vertices: mesh.n_vertices(),
            boundary,
            system,
        })
    }

    fn check(&self, g: &BoundaryDeformation) -> Result<()> {
        if let Some(&i) = self.boundary.iter().find(|&&i| g.get(i).is_none()) {
            return Err(Error::Missing(format!(
                "boundary deformation has no value at vertex {i}"
            )));
        }
        Ok(())
    }
}

impl ExtensionOperator for HarmonicSolver {
    fn extend(&self, g: &BoundaryDeformation) -> Result<NodalField> {
        self.check(g)?;
        let zero = vec![0.0; self.n_vertices];
        let parts = (0..2)
            .map(|c| self.system.solve(&zero, |i| g.get(i).expect("checked")[c]))
            .collect::<Result<Vec<_>>>()?;
        NodalField::from_components(parts)
    }
}

/// Mixed P1 discretisation of `Δ²u = 0, u = g, ∇u·n = 0`.
///
/// With the auxiliary `w = -Δu`, find `w` in the full P1 space and `u` with
/// `u = g` on the boundary such that
///
/// ```text
///   (w, φ) - (∇u, ∇φ) = 0   for all φ
///   (∇w, ∇ψ)          = 0   for all ψ vanishing on the boundary
/// ```
///
/// The normal-derivative condition is natural in the first equation. The
/// saddle-point system `[[M, -K_I], [-K_I^T, 0]]` is ordered by reverse
/// Cuthill-McKee over vertices (each vertex contributes `w` and, if
/// interior, `u`) and factored once by banded LU.
#[derive(Debug, Clone)]
pub struct BiharmonicSolver {
    n_vertices: usize,
    boundary: Vec<usize>,
    is_boundary: Vec<bool>,
    stiffness: CsrMatrix,
    w_pos: Vec<usize>,
    u_pos: Vec<Option<usize>>,
    lu: BandedLu,
}

impl BiharmonicSolver {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let n = mesh.n_vertices();
        let stiffness = assemble_stiffness(mesh);
        let mass = assemble_mass(mesh);
        let is_boundary: Vec<bool> = (0..n).map(|i| mesh.is_boundary_vertex(i)).collect();

        let order = reverse_cuthill_mckee(&mesh.vertex_neighbors());
        let mut w_pos = vec![0; n];
        let mut u_pos = vec![None; n];
        let mut next = 0;
        for &v in &order {
            w_pos[v] = next;
            next += 1;
            if !is_boundary[v] {
                u_pos[v] = Some(next);
                next += 1;
            }
        }
        let dim = next;

        let mut entries = Vec::with_capacity(mass.nnz() + 2 * stiffness.nnz());
        for v in 0..n {
            for (m, val) in mass.row(v) {
                entries.push((w_pos[v], w_pos[m], val));
            }
            for (i, val) in stiffness.row(v) {
                if let Some(ui) = u_pos[i] {
                    entries.push((w_pos[v], ui, -val));
                    entries.push((ui, w_pos[v], -val));
                }
            }
        }
        let lu = BandedLu::factor(dim, &entries)?;
        Ok(Self {
            n_vertices: n,
            boundary: mesh.boundary_vertices(),
            is_boundary,
            stiffness,
            w_pos,
            u_pos,
            lu,
        })
    }

    /// Dimension of the saddle-point system.
    pub fn system_size(&self) -> usize {
        self.w_pos.len() + self.u_pos.iter().flatten().count()
    }

    fn solve_component(&self, g_full: &[f64]) -> Result<Vec<f64>> {
        let kg = self.stiffness.mul_vec(g_full);
        let mut rhs = vec![0.0; self.system_size()];
        for v in 0..self.n_vertices {
            rhs[self.w_pos[v]] = kg[v];
        }
        let x = self.lu.solve(&rhs)?;
        Ok((0..self.n_vertices)
            .map(|v| match self.u_pos[v] {
                Some(p) => x[p],
                None => g_full[v],
            })
            .collect())
    }
}

impl ExtensionOperator for BiharmonicSolver {
    fn extend(&self, g: &BoundaryDeformation) -> Result<NodalField> {
        if let Some(&i) = self.boundary.iter().find(|&&i| g.get(i).is_none()) {
            return Err(Error::Missing(format!(
                "boundary deformation has no value at vertex {i}"
            )));
        }
        let parts = (0..2)
            .map(|c| {
                let mut full = vec![0.0; self.n_vertices];
                for (i, v) in g.iter() {
                    if self.is_boundary[i] {
                        full[i] = v[c];
                    }
                }
                self.solve_component(&full)
            })
            .collect::<Result<Vec<_>>>()?;
        let u = NodalField::from_components(parts)?;
        if u.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(
                "biharmonic solve produced non-finite values".into(),
            ));
        }
        Ok(u)
    }
}

/// Harmonic extension of `g` (Laplace problem per component).
pub fn harmonic_extension(mesh: &Mesh, g: &BoundaryDeformation) -> Result<NodalField> {
    g.validate(mesh)?;
    HarmonicSolver::new(mesh)?.extend(g)
}

/// Biharmonic extension of `g` with vanishing normal derivative.
pub fn biharmonic_extension(mesh: &Mesh, g: &BoundaryDeformation) -> Result<NodalField> {
    g.validate(mesh)?;
    BiharmonicSolver::new(mesh)?.extend(g)
}

/// `f(x) = 2(x+1)(1-x) exp(-3.5 x^7) + 0.1`, evaluated on the first
/// coordinate. Weights the region around the flag.
pub fn weighted_source(x: f64) -> f64 {
    2.0 * (x + 1.0) * (1.0 - x) * (-3.5 * x.powi(7)).exp() + 0.1
}

/// Right-hand side of the Poisson problem defining the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSource {
    /// [`weighted_source`] of the first coordinate.
    #[default]
    Weighted,
    Constant {
        value: f64,
    },
}

impl MaskSource {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        match *self {
            MaskSource::Weighted => weighted_source(p[0]),
            MaskSource::Constant { value } => value,
        }
    }
}

/// Mask `l` with the default weighted source.
pub fn mask_field(mesh: &Mesh) -> Result<NodalField> {
    mask_field_with(mesh, MaskSource::Weighted)
}

/// Solves `-Δ l̃ = f`, `l̃ = 0` on the boundary, and returns
/// `l = l̃ / max_i l̃_i`. The load vector is `M f_h` with `f_h` the P1
/// interpolant of `f`.
pub fn mask_field_with(mesh: &Mesh, source: MaskSource) -> Result<NodalField> {
    let n = mesh.n_vertices();
    let f: Vec<f64> = mesh.vertices().iter().map(|&p| source.eval(p)).collect();
    let load = assemble_mass(mesh).mul_vec(&f);
    let system = ReducedSpd::new(&assemble_stiffness(mesh), &mesh.boundary_vertices())?;
    let raw = system.solve(&load, |_| 0.0)?;
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Solver(format!(
            "mask solution has non-positive maximum {max}"
        )));
    }
    let l: Vec<f64> = raw.iter().map(|v| v / max).collect();
    if let Some(i) = (0..n).find(|&i| !mesh.is_boundary_vertex(i) && !(l[i] > 0.0)) {
        return Err(Error::Solver(format!(
            "mask is non-positive ({}) at interior vertex {i}",
            l[i]
        )));
    }
    NodalField::new(1, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::testing::unit_square;
    use crate::mesh::{generate_channel_flag_mesh, GeometryConfig};
    use crate::oracles;

    fn affine(b: [[f64; 2]; 2], c: [f64; 2]) -> impl Fn(usize, [f64; 2]) -> [f64; 2] {
        move |_, x| {
            [
                b[0][0] * x[0] + b[0][1] * x[1] + c[0],
                b[1][0] * x[0] + b[1][1] * x[1] + c[1],
            ]
        }
    }

    #[test]
    fn harmonic_zero_affine_translation() {
        let mesh = unit_square(6);
        let u = harmonic_extension(&mesh, &BoundaryDeformation::zeros(&mesh)).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));

        let map = affine([[0.1, -0.2], [0.05, 0.3]], [0.01, -0.02]);
        let g = BoundaryDeformation::from_fn(&mesh, &map);
        let u = harmonic_extension(&mesh, &g).unwrap();
        for i in 0..mesh.n_vertices() {
            let e = map(i, mesh.vertex(i));
            let got = u.vector(i);
            assert!((got[0] - e[0]).abs() <= 1e-10 && (got[1] - e[1]).abs() <= 1e-10);
        }

        let g = BoundaryDeformation::from_fn(&mesh, |_, _| [0.05, 0.0]);
        let u = harmonic_extension(&mesh, &g).unwrap();
        for i in 0..mesh.n_vertices() {
            let v = u.vector(i);
            assert!((v[0] - 0.05).abs() <= 1e-12 && v[1].abs() <= 1e-12);
        }
    }

    #[test]
    fn harmonic_missing_boundary_value() {
        let mesh = unit_square(2);
        let g = BoundaryDeformation::from_map(Default::default());
        assert!(matches!(
            harmonic_extension(&mesh, &g),
            Err(Error::Missing(_))
        ));
    }

    #[test]
    fn biharmonic_zero_and_constant() {
        let mesh = unit_square(5);
        let u = biharmonic_extension(&mesh, &BoundaryDeformation::zeros(&mesh)).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        let g = BoundaryDeformation::from_fn(&mesh, |_, _| [0.3, -0.7]);
        let u = biharmonic_extension(&mesh, &g).unwrap();
        for i in 0..mesh.n_vertices() {
            let v = u.vector(i);
            assert!((v[0] - 0.3).abs() <= 1e-10 && (v[1] + 0.7).abs() <= 1e-10);
        }
    }

    #[test]
    fn biharmonic_matches_dense_oracle() {
        let mesh = unit_square(4); // 25 vertices
        let g = BoundaryDeformation::from_fn(&mesh, |_, x| {
            [(3.0 * x[0]).sin() * x[1], x[0] * x[0] - 0.5 * x[1]]
        });
        let u = biharmonic_extension(&mesh, &g).unwrap();
        let reference = oracles::dense_biharmonic(&mesh, &g).unwrap();
        assert!(
            u.max_abs_diff(&reference) <= 1e-9,
            "{}",
            u.max_abs_diff(&reference)
        );
    }

    #[test]
    fn extensions_are_bit_exact_on_boundary() {
        let mesh = generate_channel_flag_mesh(&GeometryConfig::default(), 0.1).unwrap();
        let g = BoundaryDeformation::from_fn(&mesh, |i, x| {
            [1e-3 * (i as f64).sin(), 0.02 * x[0] * x[1]]
        });
        let h = harmonic_extension(&mesh, &g).unwrap();
        let b = biharmonic_extension(&mesh, &g).unwrap();
        for (i, v) in g.iter() {
            assert_eq!(h.vector(i), v);
            assert_eq!(b.vector(i), v);
        }
    }

    #[test]
    fn mask_properties_on_channel() {
        let mesh = generate_channel_flag_mesh(&GeometryConfig::default(), 0.1).unwrap();
        let l = mask_field(&mesh).unwrap();
        for i in 0..mesh.n_vertices() {
            let v = l.get(0, i);
            if mesh.is_boundary_vertex(i) {
                assert_eq!(v, 0.0);
            } else {
                assert!(v > 0.0 && v <= 1.0);
            }
        }
        assert_eq!(
            l.values().iter().copied().fold(f64::NEG_INFINITY, f64::max),
            1.0
        );
        assert_eq!(mask_field(&mesh).unwrap(), l);
    }

    #[test]
    fn constant_source_positive_on_square() {
        let mesh = unit_square(8);
        let l = mask_field_with(&mesh, MaskSource::Constant { value: 1.0 }).unwrap();
        for i in mesh.interior_vertices() {
            assert!(l.get(0, i) > 0.0);
        }
    }

    #[test]
    fn weighted_source_value() {
        // 2 * 1.5 * 0.5 * exp(-3.5 / 128) + 0.1 evaluated independently
        let reference = 1.5 * (-0.027_343_75_f64).exp() + 0.1;
        assert!((weighted_source(0.5) - reference).abs() <= 1e-12);
        assert!((weighted_source(0.5) - 1.559_540_059_148_699_9).abs() <= 1e-12);
    }
}
