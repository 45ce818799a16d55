//! Synthetic flag deformations and dataset files.
//!
//! The flag midline is bent by two clamped-root polynomial modes,
//! `δ(s, θ) = a sin θ (s/L)^2 + a₂ sin(2θ + φ) (s/L)^3`. The cross-section
//! at distance `s` from the root moves rigidly: lifted by `δ` and turned by
//! `atan(dδ/ds)` about the midline, so it stays normal to the bent flag.
//! Walls and cylinder stay fixed. One oscillation period is sampled at
//! `count` evenly spaced phases; the stress family holds the downward bend
//! `θ = 3π/2` at growing amplitude levels.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fem::{BiharmonicSolver, ExtensionOperator, HarmonicSolver};
use crate::files::{read_json, write_json};
use crate::mesh::{deform, BoundaryDeformation, Mesh, NodalField, INTERFACE};
use crate::quality::cell_qualities;
use crate::training::Snapshot;

/// Amplitude multiplier of the stress family found by
/// [`calibrate_stress_scale`] on the default mesh for top level 2.5.
pub const DEFAULT_STRESS_SCALE: f64 = 0.714_843_75;

/// Levels of the stress family.
pub const STRESS_LEVELS: [f64; 3] = [1.0, 2.0, 2.5];

/// Minimal-quality value the calibration aims for at the top level.
pub const STRESS_TARGET_QUALITY: f64 = 0.025;

/// Acceptable distance from [`STRESS_TARGET_QUALITY`] when calibrating.
pub const STRESS_TOLERANCE: f64 = 0.0025;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Modes {
    /// First-mode amplitude `a`.
    pub amplitude: f64,
    /// Second-mode amplitude `a₂`.
    pub amplitude2: f64,
    /// Second-mode phase offset `φ`.
    pub phase: f64,
}

impl Default for Modes {
    /// Tip deflection within about ±0.08.
    fn default() -> Self {
        Self {
            amplitude: 0.075,
            amplitude2: 0.0125,
            phase: 0.0,
        }
    }
}

impl Modes {
    /// Midline deflection at relative position `t = s / L`.
    pub fn deflection(&self, t: f64, theta: f64) -> f64 {
        let theta = theta.rem_euclid(TAU);
        self.amplitude * theta.sin() * t * t
            + self.amplitude2 * (2.0 * theta + self.phase).sin() * t * t * t
    }

    /// `d δ / d t` of [`Modes::deflection`].
    pub fn slope(&self, t: f64, theta: f64) -> f64 {
        let theta = theta.rem_euclid(TAU);
        2.0 * self.amplitude * theta.sin() * t
            + 3.0 * self.amplitude2 * (2.0 * theta + self.phase).sin() * t * t
    }

    /// Both amplitudes times `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            amplitude: self.amplitude * factor,
            amplitude2: self.amplitude2 * factor,
            phase: self.phase,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DeformationFamily {
    Oscillation {
        count: usize,
        #[serde(default)]
        modes: Modes,
    },
    Stress {
        levels: Vec<f64>,
        scale: f64,
        #[serde(default)]
        modes: Modes,
    },
}

impl DeformationFamily {
    pub fn oscillation(count: usize) -> Self {
        DeformationFamily::Oscillation {
            count,
            modes: Modes::default(),
        }
    }

    pub fn stress(levels: Vec<f64>) -> Self {
        DeformationFamily::Stress {
            levels,
            scale: DEFAULT_STRESS_SCALE,
            modes: Modes::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let finite =
            |m: &Modes| m.amplitude.is_finite() && m.amplitude2.is_finite() && m.phase.is_finite();
        match self {
            DeformationFamily::Oscillation { count, modes } => {
                if *count == 0 {
                    return Err(Error::Config("snapshot count must be at least 1".into()));
                }
                if !finite(modes) {
                    return Err(Error::Config(
                        "oscillation amplitudes must be finite".into(),
                    ));
                }
            }
            DeformationFamily::Stress {
                levels,
                scale,
                modes,
            } => {
                if levels.is_empty() {
                    return Err(Error::Config(
                        "stress family needs at least one level".into(),
                    ));
                }
                if levels.iter().any(|l| !l.is_finite() || *l < 0.0)
                    || !scale.is_finite()
                    || !finite(modes)
                {
                    return Err(Error::Config(
                        "stress levels and scale must be finite and non-negative".into(),
                    ));
                }
                if levels.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::Config(
                        "stress levels must be sorted ascending".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Root position, length and midline height of the flag, read off the
/// interface vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlagFrame {
    pub root_x: f64,
    pub length: f64,
    pub mid_y: f64,
}

impl FlagFrame {
    pub fn from_mesh(mesh: &Mesh) -> Result<Self> {
        let pts: Vec<[f64; 2]> = mesh
            .marker_vertices(INTERFACE)
            .iter()
            .map(|&i| mesh.vertex(i))
            .collect();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &pts {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        if !(hi[0] > lo[0]) {
            return Err(Error::InvalidMesh(
                "mesh has no extended interface to deform".into(),
            ));
        }
        Ok(Self {
            root_x: lo[0],
            length: hi[0] - lo[0],
            mid_y: 0.5 * (lo[1] + hi[1]),
        })
    }

    /// Relative arc position `s / L` in `[0, 1]`.
    pub fn position(&self, x: f64) -> f64 {
        ((x - self.root_x) / self.length).clamp(0.0, 1.0)
    }
}

/// Each cross-section of the flag is lifted by the midline deflection and
/// turned to stay normal to the deflected midline; zero off the interface.
pub fn flag_deformation(
    mesh: &Mesh,
    frame: FlagFrame,
    modes: &Modes,
    theta: f64,
) -> BoundaryDeformation {
    let interface = mesh.marker_vertices(INTERFACE);
    BoundaryDeformation::from_fn(mesh, |i, x| {
        if interface.binary_search(&i).is_ok() {
            let t = frame.position(x[0]);
            let phi = (modes.slope(t, theta) / frame.length).atan();
            let off = x[1] - frame.mid_y;
            [
                -off * phi.sin(),
                modes.deflection(t, theta) + off * (phi.cos() - 1.0),
            ]
        } else {
            [0.0, 0.0]
        }
    })
}

/// Phase of oscillation snapshot `k` out of `count`.
pub fn oscillation_phase(k: usize, count: usize) -> f64 {
    TAU * k as f64 / count as f64
}

pub const STRESS_PHASE: f64 = 1.5 * PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mesh_hash: String,
    pub family: DeformationFamily,
    pub snapshots: Vec<Snapshot>,
    /// Amplitude factor finally used per snapshot (1 unless a snapshot had
    /// to be attenuated to keep its target valid).
    pub attenuation: Vec<f64>,
    pub meta: BTreeMap<String, Value>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// Minimal scaled Jacobian of the mesh moved by `u`.
pub fn min_deformed_quality(mesh: &Mesh, u: &NodalField) -> Result<f64> {
    Ok(cell_qualities(&deform(mesh, u)?)
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// Halvings tried before an oscillation snapshot is given up.
const MAX_ATTENUATIONS: usize = 8;

fn solvers(mesh: &Mesh) -> Result<(HarmonicSolver, BiharmonicSolver)> {
    Ok((HarmonicSolver::new(mesh)?, BiharmonicSolver::new(mesh)?))
}

/// One period of flag oscillation; biharmonic targets whose deformed mesh
/// is not valid are regenerated at half the amplitude.
pub fn gen_oscillation_snapshots(mesh: &Mesh, family: &DeformationFamily) -> Result<Dataset> {
    family.check()?;
    let DeformationFamily::Oscillation { count, modes } = family else {
        return Err(Error::Config("expected the oscillation family".into()));
    };
    let frame = FlagFrame::from_mesh(mesh)?;
    let (harmonic, biharmonic) = solvers(mesh)?;
    let made = (0..*count)
        .into_par_iter()
        .map(|k| {
            let theta = oscillation_phase(k, *count);
            let mut factor = 1.0;
            for _ in 0..=MAX_ATTENUATIONS {
                let g = flag_deformation(mesh, frame, &modes.scaled(factor), theta);
                let target = biharmonic.extend(&g)?;
                if min_deformed_quality(mesh, &target)? > 0.0 {
                    let h = harmonic.extend(&g)?;
                    return Ok((Snapshot::new(mesh, k, g, target, h)?, factor));
                }
                factor *= 0.5;
            }
            Err(Error::DegenerateGeometry(format!(
                "snapshot {k}: biharmonic target stays inverted after {MAX_ATTENUATIONS} attenuations"
            )))
        })
        .collect::<Result<Vec<_>>>()?;
    let (snapshots, attenuation) = made.into_iter().unzip();
    Ok(Dataset {
        mesh_hash: mesh.hash(),
        family: family.clone(),
        snapshots,
        attenuation,
        meta: BTreeMap::new(),
    })
}

/// Downward bend at each level times `scale`; no validity filtering. The
/// biharmonic minimal quality of every level goes into the metadata.
pub fn gen_stress_snapshots(mesh: &Mesh, family: &DeformationFamily) -> Result<Dataset> {
    family.check()?;
    let DeformationFamily::Stress {
        levels,
        scale,
        modes,
    } = family
    else {
        return Err(Error::Config("expected the stress family".into()));
    };
    let frame = FlagFrame::from_mesh(mesh)?;
    let (harmonic, biharmonic) = solvers(mesh)?;
    let made = levels
        .par_iter()
        .enumerate()
        .map(|(k, &level)| {
            let g = flag_deformation(mesh, frame, &modes.scaled(level * scale), STRESS_PHASE);
            let target = biharmonic.extend(&g)?;
            let q = min_deformed_quality(mesh, &target)?;
            let h = harmonic.extend(&g)?;
            Ok((Snapshot::new(mesh, k, g, target, h)?, q))
        })
        .collect::<Result<Vec<_>>>()?;
    let qualities: Vec<f64> = made.iter().map(|(_, q)| *q).collect();
    let mut meta = BTreeMap::new();
    meta.insert(
        "biharmonic_min_quality".into(),
        serde_json::json!(qualities),
    );
    Ok(Dataset {
        mesh_hash: mesh.hash(),
        family: family.clone(),
        attenuation: vec![1.0; levels.len()],
        snapshots: made.into_iter().map(|(s, _)| s).collect(),
        meta,
    })
}

/// Dispatches on the family.
pub fn generate(mesh: &Mesh, family: &DeformationFamily) -> Result<Dataset> {
    match family {
        DeformationFamily::Oscillation { .. } => gen_oscillation_snapshots(mesh, family),
        DeformationFamily::Stress { .. } => gen_stress_snapshots(mesh, family),
    }
}

/// Result of [`calibrate_stress_scale`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scale: f64,
    pub min_quality: f64,
    pub iterations: usize,
}

/// Scale for which the biharmonic extension of the downward bend at
/// `top_level` has minimal quality `target`: doubling brackets the
/// crossing, bisection narrows it until within `tol` of `target`.
pub fn calibrate_stress_scale(
    mesh: &Mesh,
    modes: &Modes,
    top_level: f64,
    target: f64,
    tol: f64,
) -> Result<Calibration> {
    if !(top_level > 0.0) || !(target > 0.0) || !(tol > 0.0) {
        return Err(Error::Config(
            "calibration needs positive level, target and tolerance".into(),
        ));
    }
    let frame = FlagFrame::from_mesh(mesh)?;
    let biharmonic = BiharmonicSolver::new(mesh)?;
    let quality_at = |scale: f64| -> Result<f64> {
        let g = flag_deformation(mesh, frame, &modes.scaled(top_level * scale), STRESS_PHASE);
        min_deformed_quality(mesh, &biharmonic.extend(&g)?)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut iterations = 0;
    let mut q_hi = quality_at(hi)?;
    while q_hi > target {
        lo = hi;
        hi *= 2.0;
        q_hi = quality_at(hi)?;
        iterations += 1;
        if iterations > 60 {
            return Err(Error::Solver(
                "stress calibration failed to bracket the target quality".into(),
            ));
        }
    }
    let (mut best, mut q_best) = (hi, q_hi);
    for _ in 0..100 {
        if (q_best - target).abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let q = quality_at(mid)?;
        iterations += 1;
        if q > target {
            lo = mid;
        } else {
            hi = mid;
        }
        best = mid;
        q_best = q;
    }
    Ok(Calibration {
        scale: best,
        min_quality: q_best,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    k: usize,
    g: String,
    u_bih: String,
    h: String,
    attenuation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    mesh_hash: String,
    family: DeformationFamily,
    snapshots: Vec<ManifestEntry>,
    #[serde(default)]
    meta: BTreeMap<String, Value>,
}

/// Manifest plus one JSON file per field and snapshot.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let mut entries = Vec::with_capacity(ds.len());
    for (s, &att) in ds.snapshots.iter().zip(&ds.attenuation) {
        let name = |what: &str| format!("{what}_{:04}.json", s.index);
        let e = ManifestEntry {
            k: s.index,
            g: name("g"),
            u_bih: name("u_bih"),
            h: name("h"),
            attenuation: att,
        };
        write_json(&dir.join(&e.g), &s.g)?;
        write_json(&dir.join(&e.u_bih), &s.target)?;
        write_json(&dir.join(&e.h), &s.harmonic)?;
        entries.push(e);
    }
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            mesh_hash: ds.mesh_hash.clone(),
            family: ds.family.clone(),
            snapshots: entries,
            meta: ds.meta.clone(),
        },
    )
}

/// Loads a dataset and checks it was generated on `mesh`.
pub fn load_dataset(dir: &Path, mesh: &Mesh) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let found = mesh.hash();
    if manifest.mesh_hash != found {
        return Err(Error::MeshHashMismatch {
            expected: manifest.mesh_hash,
            found,
        });
    }
    let mut snapshots = Vec::with_capacity(manifest.snapshots.len());
    let mut attenuation = Vec::with_capacity(manifest.snapshots.len());
    for e in &manifest.snapshots {
        let g: BoundaryDeformation = read_json(&dir.join(&e.g))?;
        let target: NodalField = read_json(&dir.join(&e.u_bih))?;
        let h: NodalField = read_json(&dir.join(&e.h))?;
        snapshots.push(Snapshot::new(mesh, e.k, g, target, h)?);
        attenuation.push(e.attenuation);
    }
    Ok(Dataset {
        mesh_hash: manifest.mesh_hash,
        family: manifest.family,
        snapshots,
        attenuation,
        meta: manifest.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_channel_flag_mesh, GeometryConfig, CYLINDER, OUTER};
    use proptest::prelude::*;

    fn channel(h: f64) -> Mesh {
        generate_channel_flag_mesh(&GeometryConfig::default(), h).unwrap()
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let mesh = channel(0.1);
        let family = DeformationFamily::Oscillation {
            count: 3,
            modes: Modes {
                amplitude: 0.0,
                amplitude2: 0.0,
                phase: 0.0,
            },
        };
        let ds = gen_oscillation_snapshots(&mesh, &family).unwrap();
        for s in &ds.snapshots {
            assert_eq!(s.g.max_norm(), 0.0);
            assert!(s.target.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn oscillation_invariants() {
        let mesh = channel(0.1);
        let ds = gen_oscillation_snapshots(&mesh, &DeformationFamily::oscillation(12)).unwrap();
        assert_eq!(ds.len(), 12);
        let frame = FlagFrame::from_mesh(&mesh).unwrap();
        let fixed: Vec<usize> = mesh
            .marker_vertices(OUTER)
            .into_iter()
            .chain(mesh.marker_vertices(CYLINDER))
            .collect();
        for s in &ds.snapshots {
            for &i in &fixed {
                assert_eq!(s.g.get(i).unwrap(), [0.0, 0.0]);
            }
            for i in mesh.marker_vertices(INTERFACE) {
                if mesh.vertex(i)[0] == frame.root_x {
                    assert_eq!(s.g.get(i).unwrap(), [0.0, 0.0]);
                }
            }
            for (i, gi) in s.g.iter() {
                assert_eq!(s.target.vector(i), gi);
            }
            assert!(min_deformed_quality(&mesh, &s.target).unwrap() > 0.0);
        }
        // the first snapshot has phase 0 and only the second mode, which
        // vanishes at phase 0 too
        assert_eq!(ds.snapshots[0].g.max_norm(), 0.0);
        let tip = (0..12)
            .map(|k| ds.snapshots[k].g.max_norm())
            .fold(0.0, f64::max);
        assert!(tip > 0.07 && tip < 0.09, "{tip}");
    }

    #[test]
    fn stress_levels_increase() {
        let mesh = channel(0.1);
        let ds = gen_stress_snapshots(&mesh, &DeformationFamily::stress(vec![0.0, 1.0, 2.0, 2.5]))
            .unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.snapshots[0].g.max_norm(), 0.0);
        let norms: Vec<f64> = ds.snapshots.iter().map(|s| s.g.max_norm()).collect();
        assert!(norms.windows(2).all(|w| w[1] > w[0]), "{norms:?}");
        assert!(DeformationFamily::stress(vec![2.0, 1.0]).check().is_err());
        assert!(DeformationFamily::oscillation(0).check().is_err());
    }

    #[test]
    fn round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = channel(0.1);
        let ds = gen_oscillation_snapshots(&mesh, &DeformationFamily::oscillation(4)).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path(), &mesh).unwrap();
        assert_eq!(back, ds);
        let again = generate(&mesh, &back.family).unwrap();
        assert_eq!(again, ds);
        let err = load_dataset(dir.path(), &channel(0.08)).unwrap_err();
        assert!(err.to_string().contains("mesh hash mismatch"));
    }

    #[test]
    fn frozen_scale_matches_calibration() {
        let mesh = channel(crate::mesh::DEFAULT_EDGE_LENGTH);
        let c = calibrate_stress_scale(
            &mesh,
            &Modes::default(),
            2.5,
            STRESS_TARGET_QUALITY,
            STRESS_TOLERANCE,
        )
        .unwrap();
        assert_eq!(c.scale, DEFAULT_STRESS_SCALE);
        assert!(c.min_quality > 0.0 && c.min_quality < 0.05);
    }

    proptest! {
        #[test]
        fn deflection_is_periodic(theta in -10.0f64..10.0, t in 0.0f64..1.0) {
            let m = Modes::default();
            let a = m.deflection(t, theta);
            let b = m.deflection(t, theta + TAU);
            prop_assert!((a - b).abs() <= 1e-14);
        }

        #[test]
        fn slope_matches_difference(theta in -4.0f64..4.0, t in 0.01f64..0.99) {
            let m = Modes::default();
            let h = 1e-6;
            let fd = (m.deflection(t + h, theta) - m.deflection(t - h, theta)) / (2.0 * h);
            prop_assert!((fd - m.slope(t, theta)).abs() <= 1e-8);
        }
    }
}
