use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Mesh, Point};
use crate::error::{Error, Result};

/// Per-vertex coefficients of a P1 function with 1 or 2 components.
///
/// Values are stored component-major, vertex-minor: `values[c * n + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalField {
    components: usize,
    values: Vec<f64>,
}

impl NodalField {
    pub fn new(components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || components > 2 {
            return Err(Error::Config(format!(
                "nodal fields have 1 or 2 components, got {components}"
            )));
        }
        if !values.len().is_multiple_of(components) {
            return Err(Error::Dimension {
                expected: components * (values.len() / components),
                actual: values.len(),
                context: "nodal field value count",
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("nodal field value {i}")));
        }
        Ok(Self { components, values })
    }

    pub fn zeros(components: usize, n_vertices: usize) -> Self {
        Self {
            components,
            values: vec![0.0; components * n_vertices],
        }
    }

    /// Assemble from per-component vectors of vertex values.
    pub fn from_components(parts: Vec<Vec<f64>>) -> Result<Self> {
        let components = parts.len();
        let n = parts.first().map_or(0, Vec::len);
        if parts.iter().any(|p| p.len() != n) {
            return Err(Error::Config("component vectors differ in length".into()));
        }
        Self::new(components, parts.concat())
    }

    /// `f(i, x)` returns the `components` values at vertex `i`.
    pub fn from_vertex_fn(
        mesh: &Mesh,
        components: usize,
        f: impl Fn(usize, Point) -> Vec<f64>,
    ) -> Self {
        let n = mesh.n_vertices();
        let mut values = vec![0.0; components * n];
        for i in 0..n {
            let v = f(i, mesh.vertex(i));
            for c in 0..components {
                values[c * n + i] = v[c];
            }
        }
        Self { components, values }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn n_vertices(&self) -> usize {
        self.values.len() / self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.n_vertices();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, i: usize) -> f64 {
        self.values[c * self.n_vertices() + i]
    }

    /// Two-component value at a vertex. Panics on scalar fields.
    pub fn vector(&self, i: usize) -> [f64; 2] {
        assert_eq!(self.components, 2, "vector() on a scalar field");
        let n = self.n_vertices();
        [self.values[i], self.values[n + i]]
    }

    pub fn check_len(&self, n_vertices: usize) -> Result<()> {
        if self.n_vertices() != n_vertices {
            return Err(Error::Dimension {
                expected: n_vertices,
                actual: self.n_vertices(),
                context: "nodal field vertex count",
            });
        }
        Ok(())
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &NodalField, beta: f64) -> NodalField {
        assert_eq!(self.values.len(), other.values.len());
        NodalField {
            components: self.components,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &NodalField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Prescribed displacement `g` at every boundary vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDeformation {
    values: BTreeMap<usize, [f64; 2]>,
}

impl BoundaryDeformation {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self::from_fn(mesh, |_, _| [0.0, 0.0])
    }

    /// Evaluates `f(i, x)` at each boundary vertex.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(usize, Point) -> [f64; 2]) -> Self {
        Self {
            values: mesh
                .boundary_vertices()
                .into_iter()
                .map(|i| (i, f(i, mesh.vertex(i))))
                .collect(),
        }
    }

    /// Restriction of a displacement field to the boundary.
    pub fn from_field(mesh: &Mesh, u: &NodalField) -> Self {
        Self::from_fn(mesh, |i, _| u.vector(i))
    }

    pub fn from_map(values: BTreeMap<usize, [f64; 2]>) -> Self {
        Self { values }
    }

    pub fn get(&self, i: usize) -> Option<[f64; 2]> {
        self.values.get(&i).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, [f64; 2])> + '_ {
        self.values.iter().map(|(&i, &v)| (i, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .values()
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f64::max)
    }

    /// `alpha * self + beta * other`; both must cover the same vertices.
    pub fn combine(&self, alpha: f64, other: &BoundaryDeformation, beta: f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|(&i, a)| {
                    let b = other.values[&i];
                    (i, [alpha * a[0] + beta * b[0], alpha * a[1] + beta * b[1]])
                })
                .collect(),
        }
    }

    /// Checks that every boundary vertex has a finite value.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        for i in mesh.boundary_vertices() {
            match self.values.get(&i) {
                None => {
                    return Err(Error::Missing(format!(
                        "boundary deformation has no value at boundary vertex {i}"
                    )))
                }
                Some(v) if !v[0].is_finite() || !v[1].is_finite() => {
                    return Err(Error::NonFinite(format!(
                        "boundary deformation at vertex {i}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}
