//! DeepONet `D(g)(x) = B(E(g)) · T(x)` with split vector output, and the
//! corrected operator `U(g) = h(g) + l D(g)`.
//!
//! The branch `B` sees the boundary displacement at the sensors, the trunk
//! `T` sees a (normalized) point. With latent size `p`, the first `p/2`
//! branch and trunk outputs give the x-component and the last `p/2` the
//! y-component.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{read_json, write_json};
use crate::mesh::{BoundaryDeformation, Mesh, NodalField, Point, PointLocator, INTERFACE};
use crate::neural::{Activation, Architecture, Mlp};

/// Interface vertices in the order they are fed to the branch: along the
/// interface polyline, starting from the endpoint with the smallest `y`
/// (ties broken by `x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    indices: Vec<usize>,
    coords: Vec<Point>,
}

impl SensorLayout {
    pub fn from_mesh(mesh: &Mesh) -> Result<Self> {
        let adjacency = mesh.marker_adjacency(INTERFACE);
        if adjacency.is_empty() {
            return Err(Error::InvalidMesh(
                "mesh has no interface (marker 3) edges".into(),
            ));
        }
        let key = |i: usize| {
            let p = mesh.vertex(i);
            (p[1], p[0])
        };
        let ends: Vec<usize> = adjacency
            .iter()
            .filter(|(_, n)| n.len() == 1)
            .map(|(&i, _)| i)
            .collect();
        // a closed interface has no endpoints; start from its lowest vertex
        let pool = if ends.is_empty() {
            adjacency.keys().copied().collect()
        } else {
            ends
        };
        let start = pool
            .into_iter()
            .min_by(|&a, &b| key(a).partial_cmp(&key(b)).expect("finite coordinates"))
            .expect("non-empty");
        let mut order = vec![start];
        let mut prev = usize::MAX;
        let mut cur = start;
        loop {
            let next = adjacency[&cur]
                .iter()
                .copied()
                .find(|&n| n != prev && !order.contains(&n));
            match next {
                Some(n) => {
                    order.push(n);
                    prev = cur;
                    cur = n;
                }
                None => break,
            }
        }
        Self::from_indices(mesh, order)
    }

    /// A layout in caller-chosen order; every index must be an interface
    /// vertex and appear once.
    pub fn from_indices(mesh: &Mesh, indices: Vec<usize>) -> Result<Self> {
        let allowed = mesh.marker_vertices(INTERFACE);
        let mut seen = std::collections::BTreeSet::new();
        for &i in &indices {
            if allowed.binary_search(&i).is_err() {
                return Err(Error::Config(format!(
                    "sensor {i} is not an interface vertex"
                )));
            }
            if !seen.insert(i) {
                return Err(Error::Config(format!("sensor {i} listed twice")));
            }
        }
        let coords = indices.iter().map(|&i| mesh.vertex(i)).collect();
        Ok(Self { indices, coords })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Branch input size: two values per sensor.
    pub fn input_dim(&self) -> usize {
        2 * self.indices.len()
    }
}

/// `[g_x(s_1), g_y(s_1), g_x(s_2), ...]` over the layout.
pub fn encode_boundary(g: &BoundaryDeformation, sensors: &SensorLayout) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(sensors.input_dim());
    for &i in sensors.indices() {
        let v = g.get(i).ok_or_else(|| {
            Error::Missing(format!(
                "boundary deformation has no value at sensor vertex {i}"
            ))
        })?;
        out.extend_from_slice(&v);
    }
    Ok(out)
}

/// Input transforms stored with a model: trunk points are mapped affinely
/// from the box `[lo, hi]` onto `[-1, 1]^2`, branch inputs are multiplied by
/// `branch_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub trunk_lo: Point,
    pub trunk_hi: Point,
    pub branch_scale: f64,
}

impl Normalization {
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let [x0, y0, x1, y1] = mesh.bounding_box();
        Self {
            trunk_lo: [x0, y0],
            trunk_hi: [x1, y1],
            branch_scale: 1.0,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = (0..2).all(|k| self.trunk_hi[k] > self.trunk_lo[k])
            && self.branch_scale.is_finite()
            && self.branch_scale > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid normalization {self:?}")));
        }
        Ok(())
    }

    pub fn trunk(&self, p: Point) -> Point {
        let f = |k: usize| {
            2.0 * (p[k] - self.trunk_lo[k]) / (self.trunk_hi[k] - self.trunk_lo[k]) - 1.0
        };
        [f(0), f(1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepOnet {
    branch: Mlp,
    trunk: Mlp,
    sensors: SensorLayout,
    normalization: Normalization,
    mesh_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleInfo {
    mesh_hash: String,
    latent: usize,
    normalization: Normalization,
}

impl DeepOnet {
    pub fn new(
        branch: Mlp,
        trunk: Mlp,
        sensors: SensorLayout,
        normalization: Normalization,
        mesh_hash: String,
    ) -> Result<Self> {
        normalization.check()?;
        let p = branch.arch().output;
        if !p.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "latent size {p} is not divisible by 2"
            )));
        }
        if trunk.arch().output != p {
            return Err(Error::Dimension {
                expected: p,
                actual: trunk.arch().output,
                context: "trunk output size",
            });
        }
        if trunk.arch().input != 2 {
            return Err(Error::Dimension {
                expected: 2,
                actual: trunk.arch().input,
                context: "trunk input size",
            });
        }
        if branch.arch().input != sensors.input_dim() {
            return Err(Error::Dimension {
                expected: sensors.input_dim(),
                actual: branch.arch().input,
                context: "branch input size",
            });
        }
        Ok(Self {
            branch,
            trunk,
            sensors,
            normalization,
            mesh_hash,
        })
    }

    /// Fresh model whose branch and trunk share `depth` and `width`. Both
    /// draw from the same seed on separate streams.
    pub fn init(
        mesh: &Mesh,
        depth: usize,
        width: usize,
        latent: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let sensors = SensorLayout::from_mesh(mesh)?;
        let branch = Mlp::init(
            seed,
            0,
            Architecture::new(depth, width, sensors.input_dim(), latent)?,
            activation,
        )?;
        let trunk = Mlp::init(
            seed,
            1,
            Architecture::new(depth, width, 2, latent)?,
            activation,
        )?;
        Self::new(
            branch,
            trunk,
            sensors,
            Normalization::from_mesh(mesh),
            mesh.hash(),
        )
    }

    pub fn branch(&self) -> &Mlp {
        &self.branch
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn branch_mut(&mut self) -> &mut Mlp {
        &mut self.branch
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn sensors(&self) -> &SensorLayout {
        &self.sensors
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn set_branch_scale(&mut self, scale: f64) -> Result<()> {
        let n = Normalization {
            branch_scale: scale,
            ..self.normalization
        };
        n.check()?;
        self.normalization = n;
        Ok(())
    }

    pub fn mesh_hash(&self) -> &str {
        &self.mesh_hash
    }

    pub fn latent(&self) -> usize {
        self.branch.arch().output
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        let found = mesh.hash();
        if found != self.mesh_hash {
            return Err(Error::MeshHashMismatch {
                expected: self.mesh_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Branch input after scaling.
    pub fn branch_input(&self, g_enc: &[f64]) -> Result<Vec<f64>> {
        if g_enc.len() != self.sensors.input_dim() {
            return Err(Error::Dimension {
                expected: self.sensors.input_dim(),
                actual: g_enc.len(),
                context: "encoded boundary length",
            });
        }
        Ok(g_enc
            .iter()
            .map(|v| v * self.normalization.branch_scale)
            .collect())
    }

    pub fn branch_output(&self, g_enc: &[f64]) -> Result<Vec<f64>> {
        self.branch.forward(&self.branch_input(g_enc)?)
    }

    /// Normalized trunk inputs, one row per point.
    pub fn trunk_input(&self, points: &[Point]) -> Array2<f64> {
        Array2::from_shape_fn((points.len(), 2), |(i, k)| {
            self.normalization.trunk(points[i])[k]
        })
    }

    pub fn trunk_output(&self, points: &[Point]) -> Result<Array2<f64>> {
        self.trunk.predict_batch(self.trunk_input(points).view())
    }

    /// Splits the latent dot product into the two displacement components.
    pub fn combine(branch: &[f64], trunk: ArrayView2<'_, f64>) -> Vec<[f64; 2]> {
        let half = branch.len() / 2;
        trunk
            .rows()
            .into_iter()
            .map(|t| {
                let mut d = [0.0; 2];
                for (c, slot) in d.iter_mut().enumerate() {
                    for k in c * half..(c + 1) * half {
                        *slot += branch[k] * t[k];
                    }
                }
                d
            })
            .collect()
    }

    /// `D(g)(x)` for every point.
    pub fn eval(&self, g_enc: &[f64], points: &[Point]) -> Result<Vec<[f64; 2]>> {
        let b = self.branch_output(g_enc)?;
        let t = self.trunk_output(points)?;
        let d = Self::combine(&b, t.view());
        if d.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DeepONet output".into()));
        }
        Ok(d)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.branch.save(&dir.join("branch.json"))?;
        self.trunk.save(&dir.join("trunk.json"))?;
        write_json(&dir.join("sensors.json"), &self.sensors)?;
        write_json(
            &dir.join("bundle.json"),
            &BundleInfo {
                mesh_hash: self.mesh_hash.clone(),
                latent: self.latent(),
                normalization: self.normalization,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let info: BundleInfo = read_json(&dir.join("bundle.json"))?;
        let model = Self::new(
            Mlp::load(&dir.join("branch.json"))?,
            Mlp::load(&dir.join("trunk.json"))?,
            read_json(&dir.join("sensors.json"))?,
            info.normalization,
            info.mesh_hash,
        )?;
        if model.latent() != info.latent {
            return Err(Error::Dimension {
                expected: info.latent,
                actual: model.latent(),
                context: "bundle latent size",
            });
        }
        Ok(model)
    }

    /// Loads a bundle and insists it was built on `mesh`.
    pub fn load_for(dir: &Path, mesh: &Mesh) -> Result<Self> {
        let model = Self::load(dir)?;
        model.check_mesh(mesh)?;
        Ok(model)
    }
}

fn check_fields(
    mesh: &Mesh,
    g: &BoundaryDeformation,
    h: &NodalField,
    l: &NodalField,
) -> Result<()> {
    h.check_len(mesh.n_vertices())?;
    l.check_len(mesh.n_vertices())?;
    if h.components() != 2 || l.components() != 1 {
        return Err(Error::Dimension {
            expected: 2,
            actual: h.components(),
            context: "h must have 2 components and l one",
        });
    }
    for i in mesh.boundary_vertices() {
        let gi = g.get(i).ok_or_else(|| {
            Error::Missing(format!("boundary deformation has no value at vertex {i}"))
        })?;
        if h.vector(i) != gi {
            return Err(Error::Inconsistent(format!(
                "harmonic field at boundary vertex {i} is {:?}, boundary data is {gi:?}",
                h.vector(i)
            )));
        }
    }
    Ok(())
}

/// `U(g) = h + l D(g)` at every mesh vertex.
pub fn corrected_eval(
    model: &DeepOnet,
    g: &BoundaryDeformation,
    mesh: &Mesh,
    h: &NodalField,
    l: &NodalField,
) -> Result<NodalField> {
    check_fields(mesh, g, h, l)?;
    let d = model.eval(&encode_boundary(g, model.sensors())?, mesh.vertices())?;
    let n = mesh.n_vertices();
    let mut values = vec![0.0; 2 * n];
    for (i, di) in d.iter().enumerate() {
        let li = l.get(0, i);
        for c in 0..2 {
            values[c * n + i] = h.get(c, i) + li * di[c];
        }
    }
    NodalField::new(2, values)
}

/// `U(g)` at arbitrary points inside the mesh: `h` and `l` are interpolated
/// from their P1 values, `D` is evaluated at the exact coordinates.
pub fn corrected_eval_at(
    model: &DeepOnet,
    g: &BoundaryDeformation,
    mesh: &Mesh,
    h: &NodalField,
    l: &NodalField,
    points: &[Point],
) -> Result<Vec<[f64; 2]>> {
    check_fields(mesh, g, h, l)?;
    let d = model.eval(&encode_boundary(g, model.sensors())?, points)?;
    let locator = PointLocator::new(mesh);
    let mut hint = None;
    let mut out = Vec::with_capacity(points.len());
    for (p, di) in points.iter().zip(&d) {
        let at = locator
            .locate(*p, hint)
            .ok_or_else(|| Error::Missing(format!("point {p:?} lies outside the mesh")))?;
        hint = Some(at.cell);
        let li = at.interpolate(mesh, l.component(0));
        out.push([
            at.interpolate(mesh, h.component(0)) + li * di[0],
            at.interpolate(mesh, h.component(1)) + li * di[1],
        ]);
    }
    Ok(out)
}
