//! Run directories: `config.json`, `history.csv`, `model/`, `quality.csv`
//! and `state.json` (optimizer and scheduler state for resuming).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deeponet::DeepOnet;
use crate::error::{Error, Result};
use crate::files::{fmt_float, read_json, write_csv, write_json};
use crate::neural::{AdamState, PlateauScheduler};

use super::fit::{HistoryRow, TrainOutcome, TrainState};
use super::grid::SnapshotQuality;
use super::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SavedState {
    epoch: usize,
    branch_adam: AdamState,
    trunk_adam: AdamState,
    scheduler: Option<PlateauScheduler>,
}

pub fn write_history_csv(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                fmt_float(r.train_loss),
                r.val_loss.map(fmt_float).unwrap_or_default(),
                fmt_float(r.lr),
            ]
        })
        .collect();
    write_csv(path, &["epoch", "train_loss", "val_loss", "lr"], &rows)
}

/// Reads a history written by [`write_history_csv`].
pub fn load_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad =
        |line: usize| Error::Config(format!("{}: malformed history line {line}", path.display()));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(n + 1));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n + 1));
            Ok(HistoryRow {
                epoch: f[0].parse().map_err(|_| bad(n + 1))?,
                train_loss: num(f[1])?,
                val_loss: if f[2].is_empty() {
                    None
                } else {
                    Some(num(f[2])?)
                },
                lr: num(f[3])?,
            })
        })
        .collect()
}

/// `k,min_quality_deeponet,min_quality_biharmonic`
pub fn write_run_quality_csv(path: &Path, quality: &[SnapshotQuality]) -> Result<()> {
    let rows: Vec<Vec<String>> = quality
        .iter()
        .map(|q| {
            vec![
                q.k.to_string(),
                fmt_float(q.min_q_deeponet),
                fmt_float(q.min_q_biharmonic),
            ]
        })
        .collect();
    write_csv(
        path,
        &["k", "min_quality_deeponet", "min_quality_biharmonic"],
        &rows,
    )
}

pub fn write_run_dir(
    dir: &Path,
    config: &TrainConfig,
    outcome: &TrainOutcome,
    quality: &[SnapshotQuality],
) -> Result<()> {
    write_json(&dir.join("config.json"), config)?;
    write_history_csv(&dir.join("history.csv"), &outcome.history)?;
    write_state(dir, &outcome.state)?;
    if let Some(split) = &outcome.split {
        write_json(&dir.join("split.json"), split)?;
    }
    write_run_quality_csv(&dir.join("quality.csv"), quality)
}

/// Model bundle plus optimizer state.
pub fn write_state(dir: &Path, state: &TrainState) -> Result<()> {
    state.model.save(&dir.join("model"))?;
    write_json(
        &dir.join("state.json"),
        &SavedState {
            epoch: state.epoch,
            branch_adam: state.branch_adam.clone(),
            trunk_adam: state.trunk_adam.clone(),
            scheduler: state.scheduler.clone(),
        },
    )
}

/// Config and training state of a run directory.
pub fn load_train_state(dir: &Path) -> Result<(TrainConfig, TrainState)> {
    let config: TrainConfig = read_json(&dir.join("config.json"))?;
    let saved: SavedState = read_json(&dir.join("state.json"))?;
    let model = DeepOnet::load(&dir.join("model"))?;
    for (adam, len, what) in [
        (
            &saved.branch_adam,
            model.branch().params().len(),
            "branch optimizer state",
        ),
        (
            &saved.trunk_adam,
            model.trunk().params().len(),
            "trunk optimizer state",
        ),
    ] {
        if adam.m.len() != len || adam.v.len() != len {
            return Err(Error::Dimension {
                expected: len,
                actual: adam.m.len(),
                context: what,
            });
        }
    }
    Ok((
        config,
        TrainState {
            model,
            branch_adam: saved.branch_adam,
            trunk_adam: saved.trunk_adam,
            scheduler: saved.scheduler,
            epoch: saved.epoch,
        },
    ))
}
