use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deeponet::{corrected_eval, DeepOnet};
use crate::error::{Error, Result};
use crate::mesh::{deform, Mesh, NodalField};
use crate::quality::{cell_qualities, min_det_gradient};

use super::fit::{train, HistoryRow};
use super::run::write_run_dir;
use super::{Snapshot, TrainConfig};

/// Depth x width x latent size x seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub latents: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub id: usize,
    pub depth: usize,
    pub width: usize,
    pub latent: usize,
    pub seed: u64,
}

impl GridSpec {
    /// Depths 4 to 7, widths 128/256/512, latent 32/64, seeds 0 and 1.
    pub fn paper() -> Self {
        Self {
            depths: vec![4, 5, 6, 7],
            widths: vec![128, 256, 512],
            latents: vec![32, 64],
            seeds: vec![0, 1],
        }
    }

    /// Runs in nested order depth, width, latent, seed; ids count from 0.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &depth in &self.depths {
            for &width in &self.widths {
                for &latent in &self.latents {
                    for &seed in &self.seeds {
                        out.push(RunSpec {
                            id: out.len(),
                            depth,
                            width,
                            latent,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.depths.len() * self.widths.len() * self.latents.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RunSpec {
    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            depth: self.depth,
            width: self.width,
            latent: self.latent,
            init_seed: self.seed,
            ..*base
        }
    }

    pub fn dir_name(&self) -> String {
        format!(
            "run_{:03}_d{}_w{}_p{}_s{}",
            self.id, self.depth, self.width, self.latent, self.seed
        )
    }
}

/// How "depth" translates into layers when counting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamConvention {
    /// Depth `L` counts input and output layers: `L - 1` affine maps. This
    /// is what the networks in this crate use.
    AffineMaps,
    /// Depth counts hidden layers only: `depth + 1` affine maps.
    HiddenLayers,
}

/// Parameters of branch plus trunk with shared depth and width.
pub fn deeponet_param_count(
    depth: usize,
    width: usize,
    latent: usize,
    branch_inputs: usize,
    convention: ParamConvention,
) -> usize {
    let maps = match convention {
        ParamConvention::AffineMaps => depth.saturating_sub(1),
        ParamConvention::HiddenLayers => depth + 1,
    };
    let mlp = |input: usize| -> usize {
        if maps == 0 {
            return 0;
        }
        if maps == 1 {
            return input * latent + latent;
        }
        (input * width + width) + (maps - 2) * (width * width + width) + (width * latent + latent)
    };
    mlp(branch_inputs) + mlp(2)
}

/// Per-snapshot minima of cell quality and `det(grad chi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotQuality {
    pub k: usize,
    pub min_q_deeponet: f64,
    pub min_q_biharmonic: f64,
    pub min_j_deeponet: f64,
    pub min_j_biharmonic: f64,
}

impl SnapshotQuality {
    /// Positive when the learned motion is worse than the biharmonic one.
    pub fn gap(&self) -> f64 {
        self.min_q_biharmonic - self.min_q_deeponet
    }
}

fn min_quality(mesh: &Mesh, u: &NodalField) -> Result<(f64, f64)> {
    let moved = deform(mesh, u)?;
    let q = cell_qualities(&moved)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok((q, min_det_gradient(mesh, u)?))
}

/// Deformed-mesh quality of the corrected operator and of the biharmonic
/// targets, snapshot by snapshot.
pub fn compare_quality(
    model: &DeepOnet,
    dataset: &[Snapshot],
    mesh: &Mesh,
    l: &NodalField,
) -> Result<Vec<SnapshotQuality>> {
    dataset
        .par_iter()
        .map(|s| {
            let u = corrected_eval(model, &s.g, mesh, &s.harmonic, l)?;
            let (qd, jd) = min_quality(mesh, &u)?;
            let (qb, jb) = min_quality(mesh, &s.target)?;
            Ok(SnapshotQuality {
                k: s.index,
                min_q_deeponet: qd,
                min_q_biharmonic: qb,
                min_j_deeponet: jd,
                min_j_biharmonic: jb,
            })
        })
        .collect()
}

/// Reduction of per-snapshot quality gaps to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    WorstCase,
    Mean,
}

impl std::str::FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst" | "worst_case" | "max" => Ok(Aggregate::WorstCase),
            "mean" => Ok(Aggregate::Mean),
            other => Err(Error::Config(format!("unknown aggregate {other:?}"))),
        }
    }
}

pub fn quality_gap(quality: &[SnapshotQuality], aggregate: Aggregate) -> Result<f64> {
    if quality.is_empty() {
        return Err(Error::Missing("no per-snapshot quality data".into()));
    }
    let gaps = quality.iter().map(SnapshotQuality::gap);
    Ok(match aggregate {
        Aggregate::WorstCase => gaps.fold(f64::NEG_INFINITY, f64::max),
        Aggregate::Mean => gaps.sum::<f64>() / quality.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub val_loss: f64,
    pub quality: Vec<SnapshotQuality>,
}

fn rank_key(c: &Candidate, aggregate: Aggregate) -> Result<(f64, f64, usize)> {
    let gap = quality_gap(&c.quality, aggregate)?;
    if gap.is_nan() {
        return Err(Error::NonFinite(format!(
            "quality gap of candidate {}",
            c.id
        )));
    }
    Ok((gap, c.val_loss, c.id))
}

fn cmp_keys(a: &(f64, f64, usize), b: &(f64, f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Id of the candidate with the smallest aggregated quality gap; ties go
/// to lower validation loss, then lower id.
pub fn select_best(candidates: &[Candidate], aggregate: Aggregate) -> Result<usize> {
    let mut keyed = candidates
        .iter()
        .map(|c| rank_key(c, aggregate))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(cmp_keys);
    keyed
        .first()
        .map(|k| k.2)
        .ok_or_else(|| Error::Missing("no candidates to select from".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
    pub param_count: usize,
    pub gap: f64,
    pub quality: Vec<SnapshotQuality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub spec: RunSpec,
    /// Failures are kept as messages so one bad run does not end a search.
    pub outcome: std::result::Result<RunSummary, String>,
}

/// Trains every run of the grid on `pool`, scores each by its quality gap
/// on the full dataset and returns results ranked best first (failed runs
/// last, by id). When `out` is given, each run writes its directory there.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    grid: &GridSpec,
    base: &TrainConfig,
    dataset: &[Snapshot],
    mesh: &Mesh,
    l: &NodalField,
    aggregate: Aggregate,
    out: Option<&Path>,
    pool: &rayon::ThreadPool,
) -> Result<Vec<GridResult>> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let runs = grid.runs();
    let results: Vec<GridResult> = pool.install(|| {
        runs.par_iter()
            .map(|spec| {
                let outcome = run_one(spec, base, dataset, mesh, l, aggregate, out)
                    .map_err(|e| e.to_string());
                GridResult {
                    spec: *spec,
                    outcome,
                }
            })
            .collect()
    });
    type Ranked = (Option<(f64, f64, usize)>, GridResult);
    let mut ranked: Vec<Ranked> = results
        .into_iter()
        .map(|r| {
            let key = r
                .outcome
                .as_ref()
                .ok()
                .map(|s| (s.gap, s.final_val_loss.unwrap_or(f64::INFINITY), r.spec.id));
            (key, r)
        })
        .collect();
    ranked.sort_by(|a, b| match (&a.0, &b.0) {
        (Some(x), Some(y)) => cmp_keys(x, y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.1.spec.id.cmp(&b.1.spec.id),
    });
    Ok(ranked.into_iter().map(|(_, r)| r).collect())
}

fn run_one(
    spec: &RunSpec,
    base: &TrainConfig,
    dataset: &[Snapshot],
    mesh: &Mesh,
    l: &NodalField,
    aggregate: Aggregate,
    out: Option<&Path>,
) -> Result<RunSummary> {
    let config = spec.config(base);
    let outcome = train(&config, dataset, mesh, l)?;
    let quality = compare_quality(outcome.model(), dataset, mesh, l)?;
    if let Some(dir) = out {
        write_run_dir(&dir.join(spec.dir_name()), &config, &outcome, &quality)?;
    }
    let model = outcome.model();
    Ok(RunSummary {
        final_train_loss: outcome.final_train_loss,
        final_val_loss: outcome.final_val_loss,
        param_count: model.branch().params().len() + model.trunk().params().len(),
        gap: quality_gap(&quality, aggregate)?,
        quality,
    })
}

/// Linear interpolation between order statistics (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub history: Vec<HistoryRow>,
    pub quality: Vec<SnapshotQuality>,
    pub stagnated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedStudy {
    pub runs: Vec<SeedRun>,
}

pub const QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

impl SeedStudy {
    /// Per epoch, the 0.1/0.5/0.9 quantiles of validation (or, without a
    /// validation set, training) loss across seeds.
    pub fn loss_quantiles(&self) -> Vec<(usize, [f64; 3])> {
        let epochs = self.runs.iter().map(|r| r.history.len()).min().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let v: Vec<f64> = self
                    .runs
                    .iter()
                    .map(|r| r.history[e].val_loss.unwrap_or(r.history[e].train_loss))
                    .collect();
                (
                    self.runs[0].history[e].epoch,
                    QUANTILES.map(|q| quantile(&v, q)),
                )
            })
            .collect()
    }

    /// Per snapshot, quantiles of the learned motion's minimal quality.
    pub fn quality_quantiles(&self) -> Vec<(usize, [f64; 3])> {
        let Some(first) = self.runs.first() else {
            return Vec::new();
        };
        (0..first.quality.len())
            .map(|i| {
                let v: Vec<f64> = self
                    .runs
                    .iter()
                    .map(|r| r.quality[i].min_q_deeponet)
                    .collect();
                (first.quality[i].k, QUANTILES.map(|q| quantile(&v, q)))
            })
            .collect()
    }
}

/// True when the best loss over the first `window` epochs improves on the
/// first by less than `threshold` (relative).
pub fn is_stagnated(history: &[HistoryRow], window: usize, threshold: f64) -> bool {
    let loss = |r: &HistoryRow| r.val_loss.unwrap_or(r.train_loss);
    let Some(first) = history.first().map(loss) else {
        return false;
    };
    let best = history
        .iter()
        .take(window)
        .map(loss)
        .fold(f64::INFINITY, f64::min);
    (first - best) < threshold * first.abs()
}

/// Trains one model per seed on `pool`.
#[allow(clippy::too_many_arguments)]
pub fn seed_study(
    base: &TrainConfig,
    seeds: &[u64],
    dataset: &[Snapshot],
    mesh: &Mesh,
    l: &NodalField,
    stagnation_threshold: f64,
    out: Option<&Path>,
    pool: &rayon::ThreadPool,
) -> Result<SeedStudy> {
    if seeds.is_empty() {
        return Err(Error::Config("seed study needs at least one seed".into()));
    }
    let runs = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let config = TrainConfig {
                    init_seed: seed,
                    ..*base
                };
                let outcome = train(&config, dataset, mesh, l)?;
                let quality = compare_quality(outcome.model(), dataset, mesh, l)?;
                if let Some(dir) = out {
                    write_run_dir(
                        &dir.join(format!("seed_{seed:03}")),
                        &config,
                        &outcome,
                        &quality,
                    )?;
                }
                Ok(SeedRun {
                    seed,
                    stagnated: is_stagnated(&outcome.history, 100, stagnation_threshold),
                    history: outcome.history,
                    quality,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SeedStudy { runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(k: usize, don: f64, bih: f64) -> SnapshotQuality {
        SnapshotQuality {
            k,
            min_q_deeponet: don,
            min_q_biharmonic: bih,
            min_j_deeponet: 1.0,
            min_j_biharmonic: 1.0,
        }
    }

    #[test]
    fn paper_grid_accounting() {
        let grid = GridSpec::paper();
        assert_eq!(grid.runs().len(), 48);
        assert_eq!(grid.len(), 48);
        let ids: Vec<usize> = grid.runs().iter().map(|r| r.id).collect();
        assert_eq!(ids, (0..48).collect::<Vec<_>>());
    }

    #[test]
    fn param_counts_by_convention() {
        let c = |d, w, p, conv| deeponet_param_count(d, w, p, 412, conv);
        assert_eq!(c(4, 128, 32, ParamConvention::HiddenLayers), 160_576);
        assert_eq!(c(7, 512, 64, ParamConvention::HiddenLayers), 3_430_528);
        assert_eq!(c(4, 128, 32, ParamConvention::AffineMaps), 94_528);
        assert_eq!(c(7, 512, 64, ParamConvention::AffineMaps), 2_379_904);
        // agrees with the networks actually built
        let arch = |input| {
            crate::neural::Architecture::new(5, 256, input, 64)
                .unwrap()
                .param_count()
        };
        assert_eq!(
            c(5, 256, 64, ParamConvention::AffineMaps),
            arch(412) + arch(2)
        );
    }

    #[test]
    fn selection_rules() {
        let a = Candidate {
            id: 0,
            val_loss: 1.0,
            quality: vec![q(0, 0.48, 0.5), q(1, 0.38, 0.4)],
        };
        let b = Candidate {
            id: 1,
            val_loss: 0.5,
            quality: vec![q(0, 0.40, 0.5), q(1, 0.30, 0.4)],
        };
        assert_eq!(
            select_best(std::slice::from_ref(&b), Aggregate::WorstCase).unwrap(),
            1
        );
        assert_eq!(
            select_best(&[a.clone(), b.clone()], Aggregate::WorstCase).unwrap(),
            0
        );
        let ident = Candidate {
            id: 7,
            val_loss: 9.0,
            quality: vec![q(0, 0.5, 0.5), q(1, 0.4, 0.4)],
        };
        assert_eq!(
            select_best(&[a.clone(), b.clone(), ident], Aggregate::WorstCase).unwrap(),
            7
        );
        // equal gaps fall back to validation loss, then id
        let a2 = Candidate {
            id: 3,
            val_loss: 0.5,
            ..a.clone()
        };
        assert_eq!(
            select_best(&[a.clone(), a2.clone()], Aggregate::WorstCase).unwrap(),
            3
        );
        let a3 = Candidate {
            id: 2,
            ..a2.clone()
        };
        assert_eq!(select_best(&[a2, a3], Aggregate::Mean).unwrap(), 2);
        assert!(select_best(&[], Aggregate::WorstCase).is_err());
        let empty = Candidate {
            id: 0,
            val_loss: 0.0,
            quality: vec![],
        };
        assert!(matches!(
            select_best(&[empty], Aggregate::WorstCase),
            Err(Error::Missing(_))
        ));
    }

    #[test]
    fn aggregates_differ() {
        let qs = [q(0, 0.5, 0.5), q(1, 0.3, 0.4)];
        assert!((quality_gap(&qs, Aggregate::WorstCase).unwrap() - 0.1).abs() < 1e-15);
        assert!((quality_gap(&qs, Aggregate::Mean).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn quantile_interpolation() {
        let v = [3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.1), 1.4);
        assert!((quantile(&v, 0.9) - 4.6).abs() < 1e-15);
        assert_eq!(quantile(&[2.5], 0.1), 2.5);
        assert_eq!(quantile(&[2.5], 0.9), 2.5);
    }

    #[test]
    fn stagnation_flag() {
        let rows = |f: &dyn Fn(usize) -> f64| {
            (0..150)
                .map(|e| HistoryRow {
                    epoch: e + 1,
                    train_loss: f(e),
                    val_loss: Some(f(e)),
                    lr: 1e-3,
                })
                .collect::<Vec<_>>()
        };
        assert!(is_stagnated(&rows(&|_| 1.0), 100, 1e-2));
        assert!(!is_stagnated(&rows(&|e| 1.0 / (1.0 + e as f64)), 100, 1e-2));
        assert!(is_stagnated(
            &rows(&|e| if e < 120 { 1.0 } else { 0.1 }),
            100,
            1e-2
        ));
    }
}
