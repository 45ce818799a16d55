//! Brute-force reference computations for tests. Nothing here reuses the
//! production assembly or solvers; compiled only for tests or with the
//! `oracles` feature.

use crate::error::{Error, Result};
use crate::mesh::{BoundaryDeformation, Mesh, NodalField};

/// Dense square system `A x = b`.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub matrix: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl DenseSystem {
    pub fn new(matrix: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<Self> {
        let n = rhs.len();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(Error::Config(
                "dense system must be square and match the rhs".into(),
            ));
        }
        if matrix.iter().flatten().chain(&rhs).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense system entry".into()));
        }
        Ok(Self { matrix, rhs })
    }
}

/// Gaussian elimination with partial pivoting on the full matrix.
pub fn dense_solve(sys: &DenseSystem) -> Result<Vec<f64>> {
    let n = sys.rhs.len();
    let mut a = sys.matrix.clone();
    let mut b = sys.rhs.clone();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .expect("nonempty");
        if a[p][k] == 0.0 {
            return Err(Error::Solver(format!(
                "singular dense matrix at column {k}"
            )));
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let m = a[i][k] / a[k][k];
            if m == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= m * a[k][j];
            }
            b[i] -= m * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Ok(x)
}

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut t = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = t[i];
        t[i] = orig + step;
        let fp = f(&t);
        t[i] = orig - step;
        let fm = f(&t);
        t[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        grad.push((fp - fm) / (2.0 * step));
    }
    Ok(grad)
}

/// Gradients of the three barycentric basis functions from the inverse of
/// the reference-to-physical Jacobian, and the triangle area.
fn basis_gradients(p: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    // J = [x1 - x0, x2 - x0] as columns
    let j = [
        [p[1][0] - p[0][0], p[2][0] - p[0][0]],
        [p[1][1] - p[0][1], p[2][1] - p[0][1]],
    ];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [
        [j[1][1] / det, -j[0][1] / det],
        [-j[1][0] / det, j[0][0] / det],
    ];
    // reference gradients: φ0 = 1 - ξ - η, φ1 = ξ, φ2 = η; physical = J^{-T} ref
    let refs = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    let grads = refs.map(|g| {
        [
            inv[0][0] * g[0] + inv[1][0] * g[1],
            inv[0][1] * g[0] + inv[1][1] * g[1],
        ]
    });
    (grads, 0.5 * det.abs())
}

/// Element stiffness by integrating constant basis gradients over the area.
pub fn p1_stiffness_by_quadrature(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let (g, area) = basis_gradients(p);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

/// Element mass by the edge-midpoint rule (exact for quadratics).
pub fn p1_mass_by_quadrature(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let (_, area) = basis_gradients(p);
    // basis values at the midpoints of edges (0,1), (1,2), (2,0)
    let at = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
    let mut m = [[0.0; 3]; 3];
    for q in &at {
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += area / 3.0 * q[i] * q[j];
            }
        }
    }
    m
}

/// Dense global matrices `(K, M)`.
pub fn dense_stiffness_and_mass(mesh: &Mesh) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = mesh.n_vertices();
    let mut k = vec![vec![0.0; n]; n];
    let mut m = vec![vec![0.0; n]; n];
    for (c, cell) in mesh.cells().iter().enumerate() {
        let p = mesh.cell_points(c);
        let ke = p1_stiffness_by_quadrature(p);
        let me = p1_mass_by_quadrature(p);
        for a in 0..3 {
            for b in 0..3 {
                k[cell[a]][cell[b]] += ke[a][b];
                m[cell[a]][cell[b]] += me[a][b];
            }
        }
    }
    (k, m)
}

/// The mixed biharmonic system assembled and solved densely, unknowns
/// ordered `[w_0..w_{n-1}, u_interior...]`.
pub fn dense_biharmonic(mesh: &Mesh, g: &BoundaryDeformation) -> Result<NodalField> {
    let n = mesh.n_vertices();
    let (k, m) = dense_stiffness_and_mass(mesh);
    let interior = mesh.interior_vertices();
    let boundary = mesh.boundary_vertices();
    let dim = n + interior.len();
    let mut parts = Vec::new();
    for comp in 0..2 {
        let mut a = vec![vec![0.0; dim]; dim];
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = m[i][j];
            }
            for (col, &v) in interior.iter().enumerate() {
                a[i][n + col] = -k[i][v];
            }
            rhs[i] = boundary
                .iter()
                .map(|&b| k[i][b] * g.get(b).expect("boundary value")[comp])
                .sum();
        }
        for (row, &v) in interior.iter().enumerate() {
            for j in 0..n {
                a[n + row][j] = -k[v][j];
            }
        }
        let x = dense_solve(&DenseSystem::new(a, rhs)?)?;
        let mut u = vec![0.0; n];
        for &b in &boundary {
            u[b] = g.get(b).expect("boundary value")[comp];
        }
        for (row, &v) in interior.iter().enumerate() {
            u[v] = x[n + row];
        }
        parts.push(u);
    }
    NodalField::from_components(parts)
}
