//! Triangular meshes of the reference domain, nodal fields on them, and
//! boundary deformations.
//!
//! A [`Mesh`] is immutable once built. Boundary edges carry a marker:
//! [`OUTER`] for the channel walls, [`CYLINDER`] for the rigid obstacle and
//! [`INTERFACE`] for the elastic flag. Only interface vertices ever move
//! under the boundary deformations produced in this crate.

mod field;
mod geometry;
mod io;
mod locate;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use field::{BoundaryDeformation, NodalField};
pub use geometry::{generate_channel_flag_mesh, GeometryConfig, DEFAULT_EDGE_LENGTH};
pub use io::{load_mesh, save_mesh, MeshFile};
pub use locate::{Location, PointLocator};

/// Boundary marker of the outer channel walls.
pub const OUTER: u8 = 1;
/// Boundary marker of the cylinder.
pub const CYLINDER: u8 = 2;
/// Boundary marker of the flag (fluid-solid interface).
pub const INTERFACE: u8 = 3;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub marker: u8,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    meta: BTreeMap<String, Value>,
    is_boundary: Vec<bool>,
}

/// Twice the signed area of the triangle `(a, b, c)`; positive when
/// counterclockwise.
pub fn signed_area2(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Builds a mesh and checks every structural invariant.
    pub fn new(
        vertices: Vec<Point>,
        cells: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
        meta: BTreeMap<String, Value>,
    ) -> Result<Self> {
        let mesh = Self::from_parts(vertices, cells, boundary_edges, meta)?;
        mesh.validate()?;
        Ok(mesh)
    }

    fn from_parts(
        vertices: Vec<Point>,
        cells: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
        meta: BTreeMap<String, Value>,
    ) -> Result<Self> {
        let n = vertices.len();
        for (i, v) in vertices.iter().enumerate() {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(Error::InvalidMesh(format!(
                    "non-finite coordinate at vertex {i}"
                )));
            }
        }
        for (c, cell) in cells.iter().enumerate() {
            if let Some(&bad) = cell.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "cell {c} references vertex {bad} but mesh has {n} vertices"
                )));
            }
            if cell[0] == cell[1] || cell[1] == cell[2] || cell[0] == cell[2] {
                return Err(Error::InvalidMesh(format!("repeated vertex in cell {c}")));
            }
        }
        let mut is_boundary = vec![false; n];
        for (e, edge) in boundary_edges.iter().enumerate() {
            for &v in &edge.vertices {
                if v >= n {
                    return Err(Error::InvalidMesh(format!(
                        "boundary edge {e} references vertex {v} but mesh has {n} vertices"
                    )));
                }
                is_boundary[v] = true;
            }
        }
        Ok(Self {
            vertices,
            cells,
            boundary_edges,
            meta,
            is_boundary,
        })
    }

    fn validate(&self) -> Result<()> {
        for c in 0..self.cells.len() {
            let a2 = self.signed_area2(c);
            if a2 < 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "negative cell area at cell {c}"
                )));
            }
            if a2 == 0.0 {
                return Err(Error::InvalidMesh(format!("zero cell area at cell {c}")));
            }
        }

        let mut edge_cells: HashMap<(usize, usize), usize> = HashMap::new();
        for cell in &self.cells {
            for k in 0..3 {
                *edge_cells
                    .entry(edge_key(cell[k], cell[(k + 1) % 3]))
                    .or_default() += 1;
            }
        }
        if let Some((e, _)) = edge_cells.iter().find(|(_, &count)| count > 2) {
            return Err(Error::InvalidMesh(format!(
                "edge ({}, {}) is shared by more than two cells",
                e.0, e.1
            )));
        }
        let mut listed = BTreeSet::new();
        for (i, edge) in self.boundary_edges.iter().enumerate() {
            let key = edge_key(edge.vertices[0], edge.vertices[1]);
            if edge_cells.get(&key) != Some(&1) {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge {i} ({}, {}) is not an edge of exactly one cell",
                    key.0, key.1
                )));
            }
            if !listed.insert(key) {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge {i} listed twice"
                )));
            }
        }
        let mut unlisted: Vec<_> = edge_cells
            .iter()
            .filter(|(k, &count)| count == 1 && !listed.contains(*k))
            .map(|(k, _)| *k)
            .collect();
        unlisted.sort_unstable();
        if let Some(e) = unlisted.first() {
            return Err(Error::InvalidMesh(format!(
                "edge ({}, {}) lies on the boundary but carries no marker",
                e.0, e.1
            )));
        }

        self.check_interface_connected()
    }

    fn check_interface_connected(&self) -> Result<()> {
        let adjacency = self.marker_adjacency(INTERFACE);
        let Some(&start) = adjacency.keys().next() else {
            return Ok(());
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &w in &adjacency[&v] {
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        if seen.len() != adjacency.len() {
            return Err(Error::InvalidMesh(format!(
                "interface edges (marker {INTERFACE}) are not connected: {} of {} vertices reachable",
                seen.len(),
                adjacency.len()
            )));
        }
        if adjacency.values().any(|n| n.len() > 2) {
            return Err(Error::InvalidMesh(
                "interface edges (marker 3) branch and do not form a polyline".into(),
            ));
        }
        Ok(())
    }

    /// Vertex adjacency restricted to boundary edges with the given marker.
    pub(crate) fn marker_adjacency(&self, marker: u8) -> BTreeMap<usize, Vec<usize>> {
        let mut adjacency: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for edge in self.boundary_edges.iter().filter(|e| e.marker == marker) {
            let [a, b] = edge.vertices;
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
        for list in adjacency.values_mut() {
            list.sort_unstable();
        }
        adjacency
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Point {
        self.vertices[i]
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn meta(&self) -> &BTreeMap<String, Value> {
        &self.meta
    }

    pub fn is_boundary_vertex(&self, i: usize) -> bool {
        self.is_boundary[i]
    }

    /// All boundary vertices in increasing index order.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|&i| self.is_boundary[i])
            .collect()
    }

    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|&i| !self.is_boundary[i])
            .collect()
    }

    /// Vertices touched by at least one boundary edge with `marker`, sorted.
    pub fn marker_vertices(&self, marker: u8) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.marker == marker)
            .flat_map(|e| e.vertices)
            .collect();
        set.into_iter().collect()
    }

    pub fn cell_points(&self, c: usize) -> [Point; 3] {
        let [a, b, d] = self.cells[c];
        [self.vertices[a], self.vertices[b], self.vertices[d]]
    }

    pub fn signed_area2(&self, c: usize) -> f64 {
        let [a, b, d] = self.cell_points(c);
        signed_area2(a, b, d)
    }

    /// Area of the domain (sum of signed cell areas).
    pub fn area(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| 0.5 * self.signed_area2(c))
            .sum()
    }

    /// `[xmin, ymin, xmax, ymax]`.
    pub fn bounding_box(&self) -> [f64; 4] {
        self.vertices.iter().fold(
            [
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ],
            |b, v| {
                [
                    b[0].min(v[0]),
                    b[1].min(v[1]),
                    b[2].max(v[0]),
                    b[3].max(v[1]),
                ]
            },
        )
    }

    /// Sorted vertex neighbour lists from cell connectivity.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.n_vertices()];
        for cell in &self.cells {
            for k in 0..3 {
                let (a, b) = (cell[k], cell[(k + 1) % 3]);
                nbrs[a].insert(b);
                nbrs[b].insert(a);
            }
        }
        nbrs.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// For every cell, the neighbouring cell across the edge opposite each of
    /// its vertices.
    pub fn cell_neighbors(&self) -> Vec<[Option<usize>; 3]> {
        let mut owner: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (c, cell) in self.cells.iter().enumerate() {
            for k in 0..3 {
                owner
                    .entry(edge_key(cell[(k + 1) % 3], cell[(k + 2) % 3]))
                    .or_default()
                    .push(c);
            }
        }
        self.cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let mut out = [None; 3];
                for (k, slot) in out.iter_mut().enumerate() {
                    let key = edge_key(cell[(k + 1) % 3], cell[(k + 2) % 3]);
                    *slot = owner[&key].iter().copied().find(|&o| o != c);
                }
                out
            })
            .collect()
    }

    /// SHA-256 over coordinates (bit patterns), connectivity and markers.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            h.update(v[0].to_bits().to_le_bytes());
            h.update(v[1].to_bits().to_le_bytes());
        }
        h.update((self.cells.len() as u64).to_le_bytes());
        for cell in &self.cells {
            for &i in cell {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.update((self.boundary_edges.len() as u64).to_le_bytes());
        for e in &self.boundary_edges {
            h.update((e.vertices[0] as u64).to_le_bytes());
            h.update((e.vertices[1] as u64).to_le_bytes());
            h.update([e.marker]);
        }
        hex::encode(h.finalize())
    }
}

/// Moves every vertex by the displacement field: `x -> x + u(x)`.
///
/// Connectivity and markers are kept. The result may contain inverted cells;
/// use the `quality` module to check.
pub fn deform(mesh: &Mesh, u: &NodalField) -> Result<Mesh> {
    if u.components() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            actual: u.components(),
            context: "deform needs a 2-component displacement",
        });
    }
    u.check_len(mesh.n_vertices())?;
    let vertices = (0..mesh.n_vertices())
        .map(|i| {
            let [x, y] = mesh.vertices[i];
            let [dx, dy] = u.vector(i);
            [x + dx, y + dy]
        })
        .collect();
    Ok(Mesh {
        vertices,
        ..mesh.clone()
    })
}

/// Small meshes for tests.
#[cfg(any(test, feature = "oracles"))]
pub mod testing {
    use super::*;

    pub fn single_triangle() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            [[0, 1], [1, 2], [2, 0]]
                .into_iter()
                .map(|vertices| BoundaryEdge {
                    vertices,
                    marker: OUTER,
                })
                .collect(),
            BTreeMap::new(),
        )
        .unwrap()
    }

    /// Structured `n x n`-cell triangulation of the unit square, every
    /// boundary edge marked [`OUTER`].
    pub fn unit_square(n: usize) -> Mesh {
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut cells = Vec::new();
        for j in 0..n {
            for i in 0..n {
                cells.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                cells.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push([idx(i, 0), idx(i + 1, 0)]);
            edges.push([idx(n, i), idx(n, i + 1)]);
            edges.push([idx(i + 1, n), idx(i, n)]);
            edges.push([idx(0, i + 1), idx(0, i)]);
        }
        let boundary = edges
            .into_iter()
            .map(|vertices| BoundaryEdge {
                vertices,
                marker: OUTER,
            })
            .collect();
        Mesh::new(vertices, cells, boundary, BTreeMap::new()).unwrap()
    }
}
