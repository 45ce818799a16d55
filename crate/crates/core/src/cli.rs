//! The `meshmotion` command-line driver.
//!
//! Every command writes its outputs plus a run manifest (`*.manifest.json`
//! next to a file output, `run_manifest.json` inside a directory output).
//! Settings resolve as flags, then the `--config` JSON file, then defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{
    generate, load_dataset, save_dataset, Dataset, DeformationFamily, Modes, DEFAULT_STRESS_SCALE,
    STRESS_LEVELS,
};
use crate::deeponet::{corrected_eval, DeepOnet, SensorLayout};
use crate::error::{Error, Result};
use crate::fem::mask_field;
use crate::files::{fmt_float, read_json, write_csv, write_json};
use crate::mesh::{
    generate_channel_flag_mesh, load_mesh, save_mesh, GeometryConfig, Mesh, NodalField,
    DEFAULT_EDGE_LENGTH,
};
use crate::neural::Activation;
use crate::quality::{
    cell_qualities, histogram, quality_report, write_histogram_csv, write_quality_csv,
    QualityReport,
};
use crate::training::{
    compare_quality, deeponet_param_count, fit, grid_search, load_history, load_train_state, loss,
    seed_study, select_best, split_dataset, write_run_dir, Aggregate, Candidate, GridSpec,
    ParamConvention, Snapshot, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "meshmotion",
    version,
    about = "Learned mesh motion around a flapping flag"
)]
pub struct Cli {
    /// JSON file with settings (see `FileConfig`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for gridsearch and seedstudy; all cores when omitted.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Initialization seed for train; single seed for gridsearch/seedstudy.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (mesh) or directory (everything else).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the channel-with-flag mesh or validate a mesh file.
    Mesh(MeshArgs),
    /// Produce a snapshot dataset from a mesh.
    Datagen(DatagenArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Train a hyperparameter grid and rank it by quality gap.
    Gridsearch(GridArgs),
    /// Quality of harmonic, biharmonic and learned motion on a dataset.
    Evaluate(EvaluateArgs),
    /// Train one architecture under many seeds.
    Seedstudy(SeedArgs),
    /// Rank trained run directories by quality gap.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    /// Default geometry and edge length, ignoring any config file.
    #[arg(long, conflicts_with_all = ["edge_length", "fixture"])]
    pub default: bool,
    #[arg(long, value_parser = positive_f64, allow_negative_numbers = true)]
    pub edge_length: Option<f64>,
    /// Validate and rewrite an existing mesh file instead of generating.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Oscillation,
    Stress,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[arg(long, default_value = "mesh.json")]
    pub mesh: PathBuf,
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: Option<u64>,
    /// Stress levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    #[arg(long, value_parser = positive_f64)]
    pub stress_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Smoke,
    Paper,
}

impl Preset {
    fn config(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Smoke => TrainConfig::smoke(),
            Preset::Paper => TrainConfig::paper_scale(),
        }
    }
}

/// Training overrides shared by train, gridsearch and seedstudy.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Same as `--preset paper`.
    #[arg(long, conflicts_with = "preset")]
    pub paper_scale: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Depth, width and latent size, e.g. `4,128,32`.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<[usize; 3]>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Continue the run in this directory; `--epochs` more epochs.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Depths 4-7, widths 128/256/512, latents 32/64, seeds 0/1.
    #[arg(long)]
    pub paper_grid: bool,
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub latents: Option<Vec<usize>>,
    /// Comma list or inclusive range `a..b`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Seeds>,
    #[arg(long)]
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Model bundle directory, or a run directory containing `model/`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_parser = positive_f64)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Seeds>,
    /// Relative improvement below which the first 100 epochs count as stuck.
    #[arg(long)]
    pub stagnation_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    #[arg(long)]
    pub aggregate: Option<Aggregate>,
    /// Run directories to rank.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

/// Contents of a `--config` file. Every field is optional; `train` holds a
/// partial [`TrainConfig`] laid over the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub edge_length: Option<f64>,
    pub geometry: Option<GeometryConfig>,
    pub family: Option<Family>,
    pub count: Option<usize>,
    pub levels: Option<Vec<f64>>,
    pub stress_scale: Option<f64>,
    pub modes: Option<Modes>,
    pub preset: Option<Preset>,
    pub train: Option<Value>,
    pub aggregate: Option<Aggregate>,
    pub seeds: Option<Vec<u64>>,
    pub stagnation_threshold: Option<f64>,
    pub bin_width: Option<f64>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    /// Effective settings after resolving flags, config file and defaults.
    pub config: Value,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
    pub version: String,
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be a positive number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_arch(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[usize; 3]>::try_from(parts).map_err(|_| format!("expected depth,width,latent, got {s:?}"))
}

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let num = |p: &str| p.trim().parse::<u64>().map_err(|e| format!("{p:?}: {e}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if b < a {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok(Seeds((a..=b).collect()));
    }
    Ok(Seeds(
        s.split(',')
            .map(num)
            .collect::<std::result::Result<_, _>>()?,
    ))
}

/// Parses arguments (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<RunManifest>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<RunManifest> {
    let start = Instant::now();
    let file = match &cli.config {
        Some(p) => read_json::<FileConfig>(p)?,
        None => FileConfig::default(),
    };
    let mut ctx = Ctx {
        cli: &cli,
        file: &file,
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let (name, config, manifest_path) = match &cli.command {
        Command::Mesh(a) => ctx.mesh(a)?,
        Command::Datagen(a) => ctx.datagen(a)?,
        Command::Train(a) => ctx.train(a)?,
        Command::Gridsearch(a) => ctx.gridsearch(a)?,
        Command::Evaluate(a) => ctx.evaluate(a)?,
        Command::Seedstudy(a) => ctx.seedstudy(a)?,
        Command::Compare(a) => ctx.compare(a)?,
    };
    if let Some(missing) = ctx.outputs.iter().find(|p| !p.exists()) {
        return Err(Error::Missing(format!(
            "declared output {} was not written",
            missing.display()
        )));
    }
    let manifest = RunManifest {
        command: name.to_string(),
        config_path: cli.config.clone(),
        config,
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        wall_time_s: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

struct Ctx<'a> {
    cli: &'a Cli,
    file: &'a FileConfig,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

type Outcome = (&'static str, Value, PathBuf);

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("settings serialize to JSON")
}

/// Recursively replaces the fields of `base` present in `patch`.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: &Value) -> Result<T> {
    fn merge(a: &mut Value, b: &Value) {
        match (a, b) {
            (Value::Object(a), Value::Object(b)) => {
                for (k, v) in b {
                    merge(a.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
            (a, b) => *a = b.clone(),
        }
    }
    let mut v = to_value(base);
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| Error::Config(format!("train settings: {e}")))
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Mesh, mask and snapshots of a dataset directory.
struct Loaded {
    mesh: Mesh,
    l: NodalField,
    dataset: Dataset,
}

impl Ctx<'_> {
    fn out_or(&self, default: &str) -> PathBuf {
        self.cli
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(default))
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let h = hash_file(path)?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let jobs = self.cli.jobs.or(self.file.jobs).unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }

    fn load_data(&mut self, dir: &Path) -> Result<Loaded> {
        let mesh_path = dir.join("mesh.json");
        self.input(&mesh_path)?;
        self.input(&dir.join("manifest.json"))?;
        let mesh = load_mesh(&mesh_path)?;
        let dataset = load_dataset(dir, &mesh)?;
        let l = mask_field(&mesh)?;
        Ok(Loaded { mesh, l, dataset })
    }

    fn train_config(&self, flags: &TrainFlags) -> Result<TrainConfig> {
        let preset = if flags.paper_scale {
            Some(Preset::Paper)
        } else {
            flags.preset
        };
        let mut c = preset.or(self.file.preset).unwrap_or(Preset::Desk).config();
        if let Some(patch) = &self.file.train {
            c = overlay(&c, patch)?;
        }
        if let Some(v) = flags.epochs {
            c.epochs = v;
        }
        if let Some(v) = flags.lr {
            c.lr = v;
        }
        if let Some([d, w, p]) = flags.arch {
            (c.depth, c.width, c.latent) = (d, w, p);
        }
        if let Some(v) = flags.activation {
            c.activation = v;
        }
        if let Some(v) = flags.eps {
            c.eps = v;
        }
        if flags.batch_size.is_some() {
            c.batch_size = flags.batch_size;
        }
        if let Some(v) = flags.split_ratio {
            c.split_ratio = v;
        }
        if let Some(s) = self.cli.seed {
            c.init_seed = s;
        }
        c.check()?;
        Ok(c)
    }

    fn seeds(&self, flag: &Option<Seeds>, default: Vec<u64>) -> Vec<u64> {
        flag.as_ref()
            .map(|s| s.0.clone())
            .or_else(|| self.file.seeds.clone())
            .or_else(|| self.cli.seed.map(|s| vec![s]))
            .unwrap_or(default)
    }

    fn mesh(&mut self, a: &MeshArgs) -> Result<Outcome> {
        let out = self.out_or("mesh.json");
        let (mesh, settings) = if let Some(path) = &a.fixture {
            self.input(path)?;
            (load_mesh(path)?, serde_json::json!({ "fixture": path }))
        } else {
            let (geo, h) = if a.default {
                (GeometryConfig::default(), DEFAULT_EDGE_LENGTH)
            } else {
                let h = a
                    .edge_length
                    .or(self.file.edge_length)
                    .unwrap_or(DEFAULT_EDGE_LENGTH);
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::Usage(format!(
                        "edge length must be positive, got {h}"
                    )));
                }
                (self.file.geometry.clone().unwrap_or_default(), h)
            };
            let settings = serde_json::json!({ "geometry": geo, "edge_length": h });
            (generate_channel_flag_mesh(&geo, h)?, settings)
        };
        let sensors = SensorLayout::from_mesh(&mesh)?;
        let min_q = cell_qualities(&mesh)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let stats = serde_json::json!({
            "hash": mesh.hash(),
            "vertices": mesh.n_vertices(),
            "cells": mesh.n_cells(),
            "sensors": sensors.len(),
            "min_quality": min_q,
        });
        save_mesh(&mesh, &out)?;
        let stats_path = sibling(&out, "stats.json");
        write_json(&stats_path, &stats)?;
        println!(
            "mesh {}: {} vertices, {} cells, {} sensors, min quality {:.4}",
            out.display(),
            mesh.n_vertices(),
            mesh.n_cells(),
            sensors.len(),
            min_q
        );
        self.output(out.clone());
        self.output(stats_path);
        Ok(("mesh", settings, sibling(&out, "manifest.json")))
    }

    fn datagen(&mut self, a: &DatagenArgs) -> Result<Outcome> {
        let out = self.out_or("data");
        self.input(&a.mesh)?;
        let mesh = load_mesh(&a.mesh)?;
        let f = self.file;
        let modes = f.modes.unwrap_or_default();
        let family = match a.family.or(f.family).unwrap_or(Family::Oscillation) {
            Family::Oscillation => {
                let count = a.count.map(|c| c as usize).or(f.count).unwrap_or(207);
                if count == 0 {
                    return Err(Error::Usage("--count must be at least 1".into()));
                }
                DeformationFamily::Oscillation { count, modes }
            }
            Family::Stress => DeformationFamily::Stress {
                levels: a
                    .levels
                    .clone()
                    .or_else(|| f.levels.clone())
                    .unwrap_or_else(|| STRESS_LEVELS.to_vec()),
                scale: a
                    .stress_scale
                    .or(f.stress_scale)
                    .unwrap_or(DEFAULT_STRESS_SCALE),
                modes,
            },
        };
        let ds = generate(&mesh, &family)?;
        save_dataset(&ds, &out)?;
        save_mesh(&mesh, &out.join("mesh.json"))?;
        println!("dataset {}: {} snapshots", out.display(), ds.len());
        self.output(out.join("manifest.json"));
        self.output(out.join("mesh.json"));
        Ok(("datagen", to_value(&family), out.join("run_manifest.json")))
    }

    fn train(&mut self, a: &TrainArgs) -> Result<Outcome> {
        let data = self.load_data(&a.train.data)?;
        if let Some(dir) = &a.resume {
            return self.resume(a, dir, &data);
        }
        let out = self.out_or("run");
        let config = self.train_config(&a.train)?;
        let outcome =
            crate::training::train(&config, &data.dataset.snapshots, &data.mesh, &data.l)?;
        let quality = compare_quality(
            outcome.model(),
            &data.dataset.snapshots,
            &data.mesh,
            &data.l,
        )?;
        write_run_dir(&out, &config, &outcome, &quality)?;
        println!(
            "trained {} epochs: train loss {:.6e}, validation loss {}",
            outcome.history.len(),
            outcome.final_train_loss,
            outcome
                .final_val_loss
                .map_or("-".into(), |v| format!("{v:.6e}"))
        );
        self.run_outputs(&out);
        Ok(("train", to_value(&config), out.join("run_manifest.json")))
    }

    fn resume(&mut self, a: &TrainArgs, dir: &Path, data: &Loaded) -> Result<Outcome> {
        let out = self.cli.out.clone().unwrap_or_else(|| dir.to_path_buf());
        self.input(&dir.join("state.json"))?;
        let (mut config, state) = load_train_state(dir)?;
        let mut history = load_history(&dir.join("history.csv"))?;
        if history.len() != state.epoch {
            return Err(Error::Inconsistent(format!(
                "history has {} rows but the saved state is at epoch {}",
                history.len(),
                state.epoch
            )));
        }
        let more = a.train.epochs.unwrap_or(config.epochs);
        let snaps = &data.dataset.snapshots;
        let split = split_dataset(snaps.len(), config.split_ratio, config.split_seed)?;
        let pick = |ix: &[usize]| ix.iter().map(|&i| &snaps[i]).collect::<Vec<&Snapshot>>();
        let step = TrainConfig {
            epochs: more,
            ..config
        };
        let mut outcome = fit(
            &step,
            &pick(&split.train),
            &pick(&split.validation),
            &data.mesh,
            &data.l,
            Some(state),
        )?;
        history.extend(outcome.history.iter().copied());
        outcome.history = history;
        outcome.split = Some(split);
        config.epochs = outcome.state.epoch;
        let quality = compare_quality(outcome.model(), snaps, &data.mesh, &data.l)?;
        write_run_dir(&out, &config, &outcome, &quality)?;
        println!("resumed to epoch {}", outcome.state.epoch);
        self.run_outputs(&out);
        Ok(("train", to_value(&config), out.join("run_manifest.json")))
    }

    fn run_outputs(&mut self, dir: &Path) {
        for f in [
            "config.json",
            "history.csv",
            "state.json",
            "split.json",
            "quality.csv",
            "model/bundle.json",
        ] {
            self.output(dir.join(f));
        }
    }

    fn gridsearch(&mut self, a: &GridArgs) -> Result<Outcome> {
        let out = self.out_or("grid");
        let data = self.load_data(&a.train.data)?;
        let base = self.train_config(&a.train)?;
        let mut grid = if a.paper_grid {
            GridSpec::paper()
        } else {
            GridSpec {
                depths: vec![base.depth],
                widths: vec![base.width],
                latents: vec![base.latent],
                seeds: vec![base.init_seed],
            }
        };
        if let Some(v) = &a.depths {
            grid.depths = v.clone();
        }
        if let Some(v) = &a.widths {
            grid.widths = v.clone();
        }
        if let Some(v) = &a.latents {
            grid.latents = v.clone();
        }
        grid.seeds = self.seeds(&a.seeds, grid.seeds.clone());
        let aggregate = a.aggregate.or(self.file.aggregate).unwrap_or_default();
        let b_in = SensorLayout::from_mesh(&data.mesh)?.input_dim();
        let pool = self.pool()?;
        let results = grid_search(
            &grid,
            &base,
            &data.dataset.snapshots,
            &data.mesh,
            &data.l,
            aggregate,
            Some(&out),
            &pool,
        )?;

        let mut rows = Vec::new();
        let mut failed = Vec::new();
        for (rank, r) in results.iter().enumerate() {
            let s = &r.spec;
            let hidden = deeponet_param_count(
                s.depth,
                s.width,
                s.latent,
                b_in,
                ParamConvention::HiddenLayers,
            );
            let mut row = vec![
                (rank + 1).to_string(),
                s.id.to_string(),
                s.depth.to_string(),
                s.width.to_string(),
                s.latent.to_string(),
                s.seed.to_string(),
                hidden.to_string(),
            ];
            match &r.outcome {
                Ok(sum) => {
                    row.push(sum.param_count.to_string());
                    row.push(fmt_float(sum.gap));
                    row.push(sum.final_val_loss.map(fmt_float).unwrap_or_default());
                    row.push("ok".into());
                    self.run_outputs(&out.join(s.dir_name()));
                }
                Err(msg) => {
                    row.extend([String::new(), String::new(), String::new(), "failed".into()]);
                    failed.push(format!("run {}: {msg}", s.id));
                }
            }
            rows.push(row);
        }
        let csv = out.join("grid.csv");
        write_csv(
            &csv,
            &[
                "rank",
                "id",
                "depth",
                "width",
                "latent",
                "seed",
                "params_hidden_layers",
                "params",
                "gap",
                "val_loss",
                "status",
            ],
            &rows,
        )?;
        self.output(csv);
        let settings = serde_json::json!({ "grid": grid, "base": base, "aggregate": aggregate });
        if !failed.is_empty() {
            // grid.csv already records the finished runs
            return Err(Error::Solver(format!(
                "{} of {} grid runs failed: {}",
                failed.len(),
                results.len(),
                failed.join("; ")
            )));
        }
        if let Some(best) = results.first() {
            println!("{} runs, best {}", results.len(), best.spec.dir_name());
        }
        Ok(("gridsearch", settings, out.join("run_manifest.json")))
    }

    fn evaluate(&mut self, a: &EvaluateArgs) -> Result<Outcome> {
        let out = self.out_or("eval");
        let data = self.load_data(&a.data)?;
        let bundle = if a.model.join("bundle.json").exists() {
            a.model.clone()
        } else {
            a.model.join("model")
        };
        if !bundle.join("bundle.json").exists() {
            return Err(Error::Missing(format!(
                "no model bundle at {}",
                a.model.display()
            )));
        }
        self.input(&bundle.join("bundle.json"))?;
        let model = DeepOnet::load_for(&bundle, &data.mesh)?;
        let mut reports: Vec<QualityReport> = Vec::new();
        for s in &data.dataset.snapshots {
            let learned = corrected_eval(&model, &s.g, &data.mesh, &s.harmonic, &data.l)?;
            for (op, u) in [
                ("harmonic", &s.harmonic),
                ("biharmonic", &s.target),
                ("deeponet", &learned),
            ] {
                reports.push(quality_report(&data.mesh, u, op)?.with_snapshot(s.index));
            }
        }
        let csv = out.join("quality.csv");
        write_quality_csv(&csv, &reports)?;
        self.output(csv);

        let width = a.bin_width.or(self.file.bin_width).unwrap_or(0.05);
        let lowest = reports
            .iter()
            .map(|r| r.min_scaled_jacobian)
            .fold(0.0, f64::min);
        let edges = bin_edges(lowest, width);
        for r in &reports {
            let counts = histogram(&r.scaled_jacobian, &edges)?;
            let path = out.join("histograms").join(format!(
                "{}_{:04}.csv",
                r.operator,
                r.snapshot.unwrap_or(0)
            ));
            write_histogram_csv(&path, &edges, &counts)?;
            self.output(path);
        }
        println!(
            "evaluated {} snapshots into {}",
            data.dataset.len(),
            out.display()
        );
        let settings = serde_json::json!({ "family": data.dataset.family, "bin_width": width, "model": a.model });
        Ok(("evaluate", settings, out.join("run_manifest.json")))
    }

    fn seedstudy(&mut self, a: &SeedArgs) -> Result<Outcome> {
        let out = self.out_or("seeds");
        let data = self.load_data(&a.train.data)?;
        let base = self.train_config(&a.train)?;
        let seeds = self.seeds(&a.seeds, (0..20).collect());
        let threshold = a
            .stagnation_threshold
            .or(self.file.stagnation_threshold)
            .unwrap_or(1e-3);
        let pool = self.pool()?;
        let study = seed_study(
            &base,
            &seeds,
            &data.dataset.snapshots,
            &data.mesh,
            &data.l,
            threshold,
            Some(&out),
            &pool,
        )?;

        let quantile_rows = |qs: Vec<(usize, [f64; 3])>| -> Vec<Vec<String>> {
            qs.into_iter()
                .map(|(k, q)| {
                    std::iter::once(k.to_string())
                        .chain(q.iter().map(|&v| fmt_float(v)))
                        .collect()
                })
                .collect()
        };
        let loss_csv = out.join("loss_quantiles.csv");
        write_csv(
            &loss_csv,
            &["epoch", "q10", "q50", "q90"],
            &quantile_rows(study.loss_quantiles()),
        )?;
        let quality_csv = out.join("quality_quantiles.csv");
        write_csv(
            &quality_csv,
            &["snapshot", "q10", "q50", "q90"],
            &quantile_rows(study.quality_quantiles()),
        )?;
        let rows: Vec<Vec<String>> = study
            .runs
            .iter()
            .map(|r| {
                let last = r.history.last();
                let worst = r
                    .quality
                    .iter()
                    .map(|q| q.min_q_deeponet)
                    .fold(f64::INFINITY, f64::min);
                vec![
                    r.seed.to_string(),
                    last.map(|h| fmt_float(h.val_loss.unwrap_or(h.train_loss)))
                        .unwrap_or_default(),
                    fmt_float(worst),
                    r.stagnated.to_string(),
                ]
            })
            .collect();
        let seeds_csv = out.join("seeds.csv");
        write_csv(
            &seeds_csv,
            &["seed", "last_loss", "min_quality_deeponet", "stagnated"],
            &rows,
        )?;
        for p in [loss_csv, quality_csv, seeds_csv] {
            self.output(p);
        }
        let stuck: Vec<u64> = study
            .runs
            .iter()
            .filter(|r| r.stagnated)
            .map(|r| r.seed)
            .collect();
        println!("{} seeds, stagnated: {stuck:?}", study.runs.len());
        let settings =
            serde_json::json!({ "base": base, "seeds": seeds, "stagnation_threshold": threshold });
        Ok(("seedstudy", settings, out.join("run_manifest.json")))
    }

    fn compare(&mut self, a: &CompareArgs) -> Result<Outcome> {
        let out = self.out_or("compare");
        let data = self.load_data(&a.data)?;
        let aggregate = a.aggregate.or(self.file.aggregate).unwrap_or_default();
        let snaps = &data.dataset.snapshots;
        let mut candidates = Vec::new();
        for (id, dir) in a.runs.iter().enumerate() {
            self.input(&dir.join("model").join("bundle.json"))?;
            let model = DeepOnet::load_for(&dir.join("model"), &data.mesh)?;
            let config: TrainConfig = read_json(&dir.join("config.json"))?;
            let split = split_dataset(snaps.len(), config.split_ratio, config.split_seed)?;
            let val: Vec<&Snapshot> = split.validation.iter().map(|&i| &snaps[i]).collect();
            let val_loss = loss(&val, &model, &data.mesh, &data.l, config.eps)?;
            let quality = compare_quality(&model, snaps, &data.mesh, &data.l)?;
            candidates.push(Candidate {
                id,
                val_loss,
                quality,
            });
        }
        let best = select_best(&candidates, aggregate)?;
        let rows: Vec<Vec<String>> = candidates
            .iter()
            .map(|c| {
                let gap = crate::training::quality_gap(&c.quality, aggregate).unwrap_or(f64::NAN);
                vec![
                    c.id.to_string(),
                    a.runs[c.id].display().to_string(),
                    fmt_float(gap),
                    fmt_float(c.val_loss),
                    (c.id == best).to_string(),
                ]
            })
            .collect();
        let csv = out.join("compare.csv");
        write_csv(&csv, &["id", "run", "gap", "val_loss", "selected"], &rows)?;
        self.output(csv);
        println!("selected {}", a.runs[best].display());
        let settings = serde_json::json!({ "aggregate": aggregate, "runs": a.runs });
        Ok(("compare", settings, out.join("run_manifest.json")))
    }
}

/// Bins of `width` starting at the multiple of `width` at or below
/// `min(lowest, 0)`; the last edge is 1.
fn bin_edges(lowest: f64, width: f64) -> Vec<f64> {
    let k0 = (lowest.min(0.0) / width).floor();
    let n = ((1.0 / width - k0) - 1e-9).ceil().max(1.0) as usize;
    (0..=n)
        .map(|j| if j == n { 1.0 } else { (k0 + j as f64) * width })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_and_seed_parsing() {
        assert_eq!(parse_arch("4,128,32").unwrap(), [4, 128, 32]);
        assert!(parse_arch("4,128").is_err());
        assert_eq!(parse_seeds("0..3").unwrap(), Seeds(vec![0, 1, 2, 3]));
        assert_eq!(parse_seeds("5,1").unwrap(), Seeds(vec![5, 1]));
        assert!(parse_seeds("3..1").is_err());
        assert!(positive_f64("-1").is_err());
        assert!(positive_f64("0").is_err());
    }

    #[test]
    fn overlay_keeps_unset_fields() {
        let base = TrainConfig::smoke();
        let c = overlay(
            &base,
            &serde_json::json!({ "epochs": 7, "scheduler": { "patience": 3 } }),
        )
        .unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.scheduler.patience, 3);
        assert_eq!(c.scheduler.factor, base.scheduler.factor);
        assert_eq!(c.activation, base.activation);
        assert!(overlay(&base, &serde_json::json!({ "epochs": "many" })).is_err());
    }

    #[test]
    fn bins_cover_range() {
        let e = bin_edges(-0.12, 0.05);
        assert_eq!(*e.last().unwrap(), 1.0);
        assert!(e[0] <= -0.12 && e[0] > -0.17);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(bin_edges(0.3, 0.05).len(), 21);
        assert_eq!(bin_edges(0.3, 0.05)[0], 0.0);
    }

    #[test]
    fn flags_override_config_file() {
        let cli = Cli::try_parse_from([
            "meshmotion",
            "--seed",
            "9",
            "train",
            "--epochs",
            "3",
            "--preset",
            "smoke",
        ])
        .unwrap();
        let file = FileConfig {
            train: Some(serde_json::json!({ "epochs": 50, "lr": 0.5 })),
            ..Default::default()
        };
        let ctx = Ctx {
            cli: &cli,
            file: &file,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        };
        let Command::Train(a) = &cli.command else {
            unreachable!()
        };
        let c = ctx.train_config(&a.train).unwrap();
        assert_eq!((c.epochs, c.lr, c.init_seed), (3, 0.5, 9));
        assert_eq!(c.activation, Activation::Relu);
    }
}
