use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BoundaryEdge, Mesh, Point};
use crate::error::Result;
use crate::files::{read_json, write_json};

/// On-disk mesh layout: boundary edges are `[i, j, marker]` triples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshFile {
    pub vertices: Vec<Point>,
    pub cells: Vec<[usize; 3]>,
    pub boundary_edges: Vec<[usize; 3]>,
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

impl From<&Mesh> for MeshFile {
    fn from(mesh: &Mesh) -> Self {
        Self {
            vertices: mesh.vertices.clone(),
            cells: mesh.cells.clone(),
            boundary_edges: mesh
                .boundary_edges
                .iter()
                .map(|e| [e.vertices[0], e.vertices[1], e.marker as usize])
                .collect(),
            meta: mesh.meta.clone(),
        }
    }
}

impl TryFrom<MeshFile> for Mesh {
    type Error = crate::Error;

    fn try_from(file: MeshFile) -> Result<Self> {
        let boundary = file
            .boundary_edges
            .iter()
            .map(|&[a, b, m]| {
                let marker = u8::try_from(m).map_err(|_| {
                    crate::Error::InvalidMesh(format!("boundary marker {m} out of range"))
                })?;
                Ok(BoundaryEdge {
                    vertices: [a, b],
                    marker,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mesh::new(file.vertices, file.cells, boundary, file.meta)
    }
}

/// Reads and validates a mesh JSON file.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let file: MeshFile = read_json(path)?;
    Mesh::try_from(file)
}

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    write_json(path, &MeshFile::from(mesh))
}
