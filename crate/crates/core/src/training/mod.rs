//! Supervised training of the corrected operator `U = h + l D` against
//! biharmonic targets.
//!
//! The cost is the relative squared error
//! `J = (1/K) sum_k sum_i |h + l D - u_bih|^2 / (|h - u_bih|^2 + eps)`
//! taken per component, so the network only has to explain what the
//! harmonic extension gets wrong.

mod fit;
mod grid;
mod loss;
mod run;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ExtensionOperator, HarmonicSolver};
use crate::mesh::{BoundaryDeformation, Mesh, NodalField};
use crate::neural::{Activation, PlateauConfig};

pub use fit::{fit, train, HistoryRow, TrainOutcome, TrainState};
pub use grid::{
    compare_quality, deeponet_param_count, grid_search, is_stagnated, quality_gap, quantile,
    seed_study, select_best, Aggregate, Candidate, GridResult, GridSpec, ParamConvention, RunSpec,
    RunSummary, SeedRun, SeedStudy, SnapshotQuality, QUANTILES,
};
pub use loss::{cost, cost_term, loss};
pub use run::{
    load_history, load_train_state, write_history_csv, write_run_dir, write_run_quality_csv,
    write_state,
};

/// One training pair `(g^k, u_bih^k)` with the harmonic extension `h(g^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub index: usize,
    pub g: BoundaryDeformation,
    pub target: NodalField,
    pub harmonic: NodalField,
}

impl Snapshot {
    /// Checks that the target and harmonic fields carry `g` on the boundary.
    pub fn new(
        mesh: &Mesh,
        index: usize,
        g: BoundaryDeformation,
        target: NodalField,
        harmonic: NodalField,
    ) -> Result<Self> {
        g.validate(mesh)?;
        for (name, f) in [("target", &target), ("harmonic", &harmonic)] {
            f.check_len(mesh.n_vertices())?;
            if f.components() != 2 {
                return Err(Error::Dimension {
                    expected: 2,
                    actual: f.components(),
                    context: "snapshot field",
                });
            }
            if let Some((i, _)) = g.iter().find(|&(i, gi)| f.vector(i) != gi) {
                return Err(Error::Inconsistent(format!(
                    "snapshot {index}: {name} field differs from g at boundary vertex {i}"
                )));
            }
        }
        Ok(Self {
            index,
            g,
            target,
            harmonic,
        })
    }

    /// Builds the harmonic cache with a shared solver.
    pub fn with_solver(
        mesh: &Mesh,
        solver: &HarmonicSolver,
        index: usize,
        g: BoundaryDeformation,
        target: NodalField,
    ) -> Result<Self> {
        let harmonic = solver.extend(&g)?;
        Self::new(mesh, index, g, target, harmonic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub scheduler: PlateauConfig,
    /// Stabilizer in the cost denominator.
    pub eps: f64,
    /// `None` trains on the full training set every epoch.
    pub batch_size: Option<usize>,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub init_seed: u64,
    pub depth: usize,
    pub width: usize,
    pub latent: usize,
    pub activation: Activation,
    /// Scale branch inputs by the inverse of the largest training |g|.
    pub normalize_branch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Laptop-sized defaults.
    pub fn desk() -> Self {
        Self {
            epochs: 5000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            scheduler: PlateauConfig::default(),
            eps: 1e-10,
            batch_size: None,
            split_ratio: 0.7,
            split_seed: 0,
            init_seed: 0,
            depth: 4,
            width: 128,
            latent: 32,
            activation: Activation::Tanh,
            normalize_branch: true,
        }
    }

    /// Desk scale with ReLU, `eps = 1e-4` and lr `3e-4`. With the tanh
    /// defaults the cost is ruled by far-field points where `h` and the
    /// target agree to 1e-6 or better, and the fit never leaves `D = 0`
    /// near the flag.
    pub fn smoke() -> Self {
        Self {
            lr: 3e-4,
            eps: 1e-4,
            activation: Activation::Relu,
            ..Self::desk()
        }
    }

    /// The large setting: depth 7, width 512, 40000 epochs at lr 1e-5.
    pub fn paper_scale() -> Self {
        Self {
            epochs: 40_000,
            lr: 1e-5,
            depth: 7,
            width: 512,
            latent: 32,
            ..Self::desk()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.latent == 0 || !self.latent.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "latent size must be positive and even, got {}",
                self.latent
            )));
        }
        self.scheduler.check()
    }
}

/// Snapshot positions of a train/validation partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded shuffle, then the first `floor(ratio * n)` positions train.
/// Returned positions index `0..n`, each part sorted.
pub fn split_dataset(n: usize, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n_train = (ratio * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "split of {n} snapshots at ratio {ratio} leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    Ok(Split { train, validation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let s = split_dataset(207, 0.7, 0).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (144, 63));
        assert_eq!(s, split_dataset(207, 0.7, 0).unwrap());
        assert_ne!(s, split_dataset(207, 0.7, 1).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..207).collect::<Vec<_>>());

        let half = split_dataset(4, 0.5, 3).unwrap();
        assert_eq!((half.train.len(), half.validation.len()), (2, 2));
        assert!(half.train.iter().all(|i| !half.validation.contains(i)));

        assert!(split_dataset(1, 0.7, 0).is_err());
        assert!(split_dataset(10, 1.0, 0).is_err());
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::desk().check().is_ok());
        assert!(TrainConfig::paper_scale().check().is_ok());
        assert!(TrainConfig::smoke().check().is_ok());
        assert!(TrainConfig {
            eps: 0.0,
            ..TrainConfig::desk()
        }
        .check()
        .is_err());
        assert!(TrainConfig {
            latent: 5,
            ..TrainConfig::desk()
        }
        .check()
        .is_err());
        assert!(TrainConfig {
            split_ratio: 0.0,
            ..TrainConfig::desk()
        }
        .check()
        .is_err());
    }
}
