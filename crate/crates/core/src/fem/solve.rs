use super::CsrMatrix;
use crate::error::{Error, Result};

/// Relative residual target of the conjugate gradient solves.
pub const CG_TOLERANCE: f64 = 1e-12;

/// Prescribed values on a set of unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletBC {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl DirichletBC {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Dimension {
                expected: indices.len(),
                actual: values.len(),
                context: "Dirichlet values per constrained index",
            });
        }
        Ok(Self { indices, values })
    }

    pub fn none() -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
///
/// Stops when `|r| <= tol |b|`; fails after `max_iter` iterations.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgStats)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: b.len(),
            context: "CG right-hand side",
        });
    }
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver(format!(
                "matrix not positive definite along search direction at CG iteration {it} (p^T A p = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm(&r) / b_norm;
        if rel <= tol {
            return Ok((
                x,
                CgStats {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!(
        "conjugate gradient did not converge in {max_iter} iterations (relative residual {:e})",
        norm(&r) / b_norm
    )))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A symmetric system with a fixed constrained set, reduced once by
/// eliminating the constrained rows and columns.
#[derive(Debug, Clone)]
pub struct ReducedSpd {
    n: usize,
    constrained: Vec<usize>,
    free: Vec<usize>,
    a_ff: CsrMatrix,
    a_fc: CsrMatrix,
}

impl ReducedSpd {
    pub fn new(a: &CsrMatrix, constrained: &[usize]) -> Result<Self> {
        let n = a.dim();
        let mut is_fixed = vec![false; n];
        for &i in constrained {
            if i >= n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: i + 1,
                    context: "constrained index",
                });
            }
            is_fixed[i] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();
        let constrained: Vec<usize> = (0..n).filter(|&i| is_fixed[i]).collect();
        Ok(Self {
            n,
            a_ff: a.submatrix(&free, &free),
            a_fc: a.submatrix(&free, &constrained),
            constrained,
            free,
        })
    }

    /// Solves with `x[constrained[k]] = values_by_index(constrained[k])`.
    pub fn solve(&self, b: &[f64], fixed: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                actual: b.len(),
                context: "right-hand side",
            });
        }
        let fixed_values: Vec<f64> = self.constrained.iter().map(|&i| fixed(i)).collect();
        let correction = self.a_fc.mul_vec(&fixed_values);
        let rhs: Vec<f64> = self
            .free
            .iter()
            .zip(&correction)
            .map(|(&i, c)| b[i] - c)
            .collect();
        let mut x = vec![0.0; self.n];
        for (&i, &v) in self.constrained.iter().zip(&fixed_values) {
            x[i] = v;
        }
        if self.free.is_empty() {
            return Ok(x);
        }
        let max_iter = 10 * self.free.len().max(10);
        let (xf, _) = conjugate_gradient(&self.a_ff, &rhs, CG_TOLERANCE, max_iter)?;
        for (&i, v) in self.free.iter().zip(xf) {
            x[i] = v;
        }
        Ok(x)
    }
}

/// Solves `A x = b` subject to `bc`, eliminating constrained unknowns
/// symmetrically. Constrained entries of the result equal the prescribed
/// values exactly.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], bc: &DirichletBC) -> Result<Vec<f64>> {
    let reduced = ReducedSpd::new(a, &bc.indices)?;
    let mut value = vec![0.0; a.dim()];
    for (&i, &v) in bc.indices.iter().zip(&bc.values) {
        value[i] = v;
    }
    reduced.solve(b, |i| value[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_zero_rhs() {
        let a = CsrMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let (x, stats) = conjugate_gradient(&a, &[0.0, 0.0], 1e-12, 10).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn cg_reports_indefinite() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let err = conjugate_gradient(&a, &[1.0, -1.0], 1e-12, 10).unwrap_err();
        assert!(err.to_string().contains("positive definite"), "{err}");
    }

    #[test]
    fn cg_reports_iteration_cap() {
        let a = CsrMatrix::from_dense(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ])
        .unwrap();
        let err = conjugate_gradient(&a, &[1.0, 2.0, 3.0], 1e-14, 1).unwrap_err();
        assert!(
            err.to_string().contains("did not converge in 1 iterations"),
            "{err}"
        );
    }

    #[test]
    fn all_constrained() {
        let a = CsrMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let bc = DirichletBC::new(vec![0, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(solve_spd(&a, &[0.0, 0.0], &bc).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn mismatched_bc_rejected() {
        assert!(DirichletBC::new(vec![0, 1], vec![1.0]).is_err());
    }
}
