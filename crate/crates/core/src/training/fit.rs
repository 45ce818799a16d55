use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deeponet::{encode_boundary, DeepOnet};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField, Point};
use crate::neural::{AdamConfig, AdamState, PlateauScheduler};

use super::{split_dataset, Snapshot, Split, TrainConfig};

/// Cost gradients with respect to the branch and trunk outputs.
type OutputGrads = (Array2<f64>, Array2<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when training without a validation set.
    pub val_loss: Option<f64>,
    pub lr: f64,
}

/// Everything needed to continue training where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: DeepOnet,
    pub branch_adam: AdamState,
    pub trunk_adam: AdamState,
    pub scheduler: Option<PlateauScheduler>,
    /// Number of completed epochs.
    pub epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Losses are those of the parameters entering each epoch.
    pub history: Vec<HistoryRow>,
    pub split: Option<Split>,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
}

impl TrainOutcome {
    pub fn model(&self) -> &DeepOnet {
        &self.state.model
    }
}

/// Precomputed data for a set of snapshots: only points where `l > 0`
/// enter, since the cost vanishes identically on the boundary.
struct Problem {
    /// Rows follow ascending snapshot index.
    indices: Vec<usize>,
    branch_in: Array2<f64>,
    /// `h - u_bih`, per component, one row per snapshot.
    diff: [Array2<f64>; 2],
    denom: [Array2<f64>; 2],
}

struct Points {
    mask: Vec<f64>,
    trunk_in: Array2<f64>,
}

fn eval_points(model: &DeepOnet, mesh: &Mesh, l: &NodalField) -> Result<(Vec<usize>, Points)> {
    l.check_len(mesh.n_vertices())?;
    let verts: Vec<usize> = (0..mesh.n_vertices())
        .filter(|&i| l.get(0, i) != 0.0)
        .collect();
    let coords: Vec<Point> = verts.iter().map(|&i| mesh.vertex(i)).collect();
    let mask = verts.iter().map(|&i| l.get(0, i)).collect();
    Ok((
        verts,
        Points {
            mask,
            trunk_in: model.trunk_input(&coords),
        },
    ))
}

impl Problem {
    fn new(snapshots: &[&Snapshot], verts: &[usize], model: &DeepOnet, eps: f64) -> Result<Self> {
        let mut sorted: Vec<&Snapshot> = snapshots.to_vec();
        sorted.sort_by_key(|s| s.index);
        let k = sorted.len();
        let n = verts.len();
        let b_in = model.sensors().input_dim();
        let mut branch_in = Array2::zeros((k, b_in));
        let mut diff = [Array2::zeros((k, n)), Array2::zeros((k, n))];
        for (r, s) in sorted.iter().enumerate() {
            let enc = model.branch_input(&encode_boundary(&s.g, model.sensors())?)?;
            branch_in
                .row_mut(r)
                .assign(&ndarray::ArrayView1::from(&enc));
            for (c, d) in diff.iter_mut().enumerate() {
                for (j, &i) in verts.iter().enumerate() {
                    d[[r, j]] = s.harmonic.get(c, i) - s.target.get(c, i);
                }
            }
        }
        let denom = [diff[0].mapv(|d| d * d + eps), diff[1].mapv(|d| d * d + eps)];
        Ok(Self {
            indices: sorted.iter().map(|s| s.index).collect(),
            branch_in,
            diff,
            denom,
        })
    }

    fn rows(&self) -> Vec<usize> {
        (0..self.indices.len()).collect()
    }

    /// Cost over the given rows and, if asked, `dJ/dB` (rows x p) and
    /// `dJ/dT` (points x p).
    fn evaluate(
        &self,
        rows: &[usize],
        branch_out: ArrayView2<'_, f64>,
        trunk_out: ArrayView2<'_, f64>,
        mask: &[f64],
        want_grad: bool,
    ) -> Result<(f64, Option<OutputGrads>)> {
        let p = branch_out.ncols();
        let half = p / 2;
        let k = rows.len() as f64;
        let mut per_row = vec![0.0; rows.len()];
        let mut grads = want_grad.then(|| {
            (
                Array2::zeros((rows.len(), p)),
                Array2::zeros((trunk_out.nrows(), p)),
            )
        });
        let mut g_d = [Array2::zeros((0, 0)), Array2::zeros((0, 0))];
        for c in 0..2 {
            let cols = s![.., c * half..(c + 1) * half];
            let bc = branch_out.slice(cols);
            let tc = trunk_out.slice(cols);
            let d = bc.dot(&tc.t());
            let mut g = Array2::zeros(d.raw_dim());
            for (r, &row) in rows.iter().enumerate() {
                let diff = self.diff[c].row(row);
                let den = self.denom[c].row(row);
                for j in 0..d.ncols() {
                    let res = diff[j] + mask[j] * d[[r, j]];
                    let term = res * res / den[j];
                    if !term.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "cost term at snapshot {}, evaluation point {j}",
                            self.indices[row]
                        )));
                    }
                    per_row[r] += term;
                    g[[r, j]] = 2.0 / k * res * mask[j] / den[j];
                }
            }
            g_d[c] = g;
        }
        // per_row sums components one after the other; rows are already in
        // ascending snapshot order
        let total = per_row.iter().sum::<f64>() / k;
        if let Some((gb, gt)) = grads.as_mut() {
            for (c, g) in g_d.iter().enumerate() {
                let cols = s![.., c * half..(c + 1) * half];
                gb.slice_mut(cols).assign(&g.dot(&trunk_out.slice(cols)));
                gt.slice_mut(cols)
                    .assign(&g.t().dot(&branch_out.slice(cols)));
            }
        }
        Ok((total, grads))
    }
}

fn gather_rows(a: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}

fn initial_state(config: &TrainConfig, train: &[&Snapshot], mesh: &Mesh) -> Result<TrainState> {
    let mut model = DeepOnet::init(
        mesh,
        config.depth,
        config.width,
        config.latent,
        config.activation,
        config.init_seed,
    )?;
    if config.normalize_branch {
        let mut max = 0.0f64;
        for s in train {
            for v in encode_boundary(&s.g, model.sensors())? {
                max = max.max(v.abs());
            }
        }
        if max > 0.0 {
            model.set_branch_scale(1.0 / max)?;
        }
    }
    let adam = AdamConfig {
        lr: config.lr,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.adam_eps,
    };
    let scheduler = if config.lr > 0.0 {
        Some(PlateauScheduler::new(config.lr, config.scheduler)?)
    } else {
        None
    };
    Ok(TrainState {
        branch_adam: AdamState::new(model.branch().params().len(), adam),
        trunk_adam: AdamState::new(model.trunk().params().len(), adam),
        model,
        scheduler,
        epoch: 0,
    })
}

/// Splits `dataset` by the configured ratio and seed, then trains.
pub fn train(
    config: &TrainConfig,
    dataset: &[Snapshot],
    mesh: &Mesh,
    l: &NodalField,
) -> Result<TrainOutcome> {
    config.check()?;
    let split = split_dataset(dataset.len(), config.split_ratio, config.split_seed)?;
    let train: Vec<&Snapshot> = split.train.iter().map(|&i| &dataset[i]).collect();
    let val: Vec<&Snapshot> = split.validation.iter().map(|&i| &dataset[i]).collect();
    let mut out = fit(config, &train, &val, mesh, l, None)?;
    out.split = Some(split);
    Ok(out)
}

/// Runs `config.epochs` further epochs, from scratch or from `resume`.
/// The validation set may be empty, in which case the scheduler follows
/// the training loss.
pub fn fit(
    config: &TrainConfig,
    train: &[&Snapshot],
    val: &[&Snapshot],
    mesh: &Mesh,
    l: &NodalField,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    config.check()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut state = match resume {
        Some(s) => {
            s.model.check_mesh(mesh)?;
            s
        }
        None => initial_state(config, train, mesh)?,
    };
    let (verts, points) = eval_points(&state.model, mesh, l)?;
    let train_p = Problem::new(train, &verts, &state.model, config.eps)?;
    let val_p = if val.is_empty() {
        None
    } else {
        Some(Problem::new(val, &verts, &state.model, config.eps)?)
    };
    let all_rows = train_p.rows();
    let batch = config
        .batch_size
        .unwrap_or(all_rows.len())
        .min(all_rows.len());

    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let epoch = state.epoch + 1;
        let lr = state.branch_adam.lr();
        let diverged = |e: Error| Error::Diverged {
            epoch,
            detail: e.to_string(),
        };
        let model = &mut state.model;
        let (t_out, t_cache) = model.trunk().forward_batch(points.trunk_in.view())?;

        let val_loss = match &val_p {
            Some(vp) => {
                let b = model.branch().predict_batch(vp.branch_in.view())?;
                Some(
                    vp.evaluate(&vp.rows(), b.view(), t_out.view(), &points.mask, false)
                        .map_err(diverged)?
                        .0,
                )
            }
            None => None,
        };

        let mut order = all_rows.clone();
        if batch < order.len() {
            // a stream per epoch keeps resumed runs on the same sequence
            let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
            rng.set_stream(1 + epoch as u64);
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            let mut rows = chunk.to_vec();
            rows.sort_unstable();
            // trunk parameters change after every batch
            let (t_out, t_cache) = if bi == 0 {
                (t_out.clone(), t_cache.clone())
            } else {
                model.trunk().forward_batch(points.trunk_in.view())?
            };
            let b_in = gather_rows(&train_p.branch_in, &rows);
            let (b_out, b_cache) = model.branch().forward_batch(b_in.view())?;
            let (loss, grads) = train_p
                .evaluate(&rows, b_out.view(), t_out.view(), &points.mask, true)
                .map_err(diverged)?;
            let (gb, gt) = grads.expect("gradient requested");
            let g_branch = model
                .branch()
                .backward(&b_cache, gb.view())
                .map_err(diverged)?;
            let g_trunk = model
                .trunk()
                .backward(&t_cache, gt.view())
                .map_err(diverged)?;
            state
                .branch_adam
                .step(model.branch_mut().params_mut(), &g_branch)?;
            state
                .trunk_adam
                .step(model.trunk_mut().params_mut(), &g_trunk)?;
            epoch_loss += loss;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches as f64;
        if let Some(s) = state.scheduler.as_mut() {
            let new_lr = s.step(val_loss.unwrap_or(train_loss));
            state.branch_adam.set_lr(new_lr);
            state.trunk_adam.set_lr(new_lr);
        }
        history.push(HistoryRow {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        state.epoch = epoch;
    }

    let model = &state.model;
    let t_out = model.trunk().predict_batch(points.trunk_in.view())?;
    let final_eval = |p: &Problem| -> Result<f64> {
        let b = model.branch().predict_batch(p.branch_in.view())?;
        Ok(
            p.evaluate(&p.rows(), b.view(), t_out.view(), &points.mask, false)?
                .0,
        )
    };
    let final_train_loss = final_eval(&train_p).map_err(|e| Error::Diverged {
        epoch: state.epoch,
        detail: e.to_string(),
    })?;
    let final_val_loss =
        val_p
            .as_ref()
            .map(final_eval)
            .transpose()
            .map_err(|e| Error::Diverged {
                epoch: state.epoch,
                detail: e.to_string(),
            })?;
    Ok(TrainOutcome {
        state,
        history,
        split: None,
        final_train_loss,
        final_val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{biharmonic_extension, harmonic_extension, mask_field};
    use crate::mesh::{generate_channel_flag_mesh, BoundaryDeformation, GeometryConfig, INTERFACE};
    use crate::neural::{Architecture, Mlp};
    use crate::training::loss;

    struct Fixture {
        mesh: Mesh,
        l: NodalField,
        snapshots: Vec<Snapshot>,
    }

    fn fixture(count: usize) -> Fixture {
        let mesh = generate_channel_flag_mesh(&GeometryConfig::default(), 0.1).unwrap();
        let l = mask_field(&mesh).unwrap();
        let interface = mesh.marker_vertices(INTERFACE);
        let snapshots = (0..count)
            .map(|k| {
                let a = 0.06 * (std::f64::consts::TAU * k as f64 / count as f64 + 0.3).sin();
                let g = BoundaryDeformation::from_fn(&mesh, |i, x| {
                    if interface.binary_search(&i).is_ok() {
                        [0.0, a * ((x[0] - 0.24).max(0.0) / 0.36).powi(2)]
                    } else {
                        [0.0, 0.0]
                    }
                });
                let h = harmonic_extension(&mesh, &g).unwrap();
                let u = biharmonic_extension(&mesh, &g).unwrap();
                Snapshot::new(&mesh, k, g, u, h).unwrap()
            })
            .collect();
        Fixture { mesh, l, snapshots }
    }

    fn tiny(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            depth: 3,
            width: 16,
            latent: 4,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn single_snapshot_smoke() {
        let f = fixture(1);
        let set: Vec<&Snapshot> = f.snapshots.iter().collect();
        let out = fit(&tiny(500), &set, &[], &f.mesh, &f.l, None).unwrap();
        let first = out.history[0].train_loss;
        assert!(
            out.final_train_loss < 0.5 * first,
            "{} vs {first}",
            out.final_train_loss
        );
        assert_eq!(out.history.len(), 500);
        assert!(out.history.iter().all(|r| r.val_loss.is_none()));
    }

    #[test]
    fn zero_epochs_and_zero_lr_keep_init() {
        let f = fixture(4);
        let cfg = tiny(0);
        let out = train(&cfg, &f.snapshots, &f.mesh, &f.l).unwrap();
        assert!(out.history.is_empty());
        let b_in = out.model().sensors().input_dim();
        let fresh = Mlp::init(
            0,
            0,
            Architecture::new(3, 16, b_in, 4).unwrap(),
            cfg.activation,
        )
        .unwrap();
        assert_eq!(out.model().branch(), &fresh);
        let trunk = Mlp::init(
            0,
            1,
            Architecture::new(3, 16, 2, 4).unwrap(),
            cfg.activation,
        )
        .unwrap();
        assert_eq!(out.model().trunk(), &trunk);

        let still = train(
            &TrainConfig {
                lr: 0.0,
                ..tiny(20)
            },
            &f.snapshots,
            &f.mesh,
            &f.l,
        )
        .unwrap();
        assert_eq!(still.model().branch(), out.model().branch());
        assert_eq!(still.model().trunk(), out.model().trunk());
    }

    #[test]
    fn training_is_deterministic() {
        let f = fixture(4);
        let a = train(&tiny(30), &f.snapshots, &f.mesh, &f.l).unwrap();
        let b = train(&tiny(30), &f.snapshots, &f.mesh, &f.l).unwrap();
        assert_eq!(a.model(), b.model());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn fast_cost_agrees_with_reference_loss() {
        let f = fixture(4);
        let cfg = TrainConfig {
            split_ratio: 0.5,
            ..tiny(1)
        };
        let out = train(&cfg, &f.snapshots, &f.mesh, &f.l).unwrap();
        let split = out.split.clone().unwrap();
        let val: Vec<&Snapshot> = split.validation.iter().map(|&i| &f.snapshots[i]).collect();
        let reference = loss(&val, out.model(), &f.mesh, &f.l, cfg.eps).unwrap();
        let fast = out.final_val_loss.unwrap();
        assert!(
            (reference - fast).abs() <= 1e-9 * reference,
            "{reference} vs {fast}"
        );
    }

    #[test]
    fn cost_gradient_matches_differences() {
        let f = fixture(3);
        let set: Vec<&Snapshot> = f.snapshots.iter().collect();
        let cfg = TrainConfig {
            eps: 1e-4,
            ..tiny(0)
        };
        let model = fit(&cfg, &set, &[], &f.mesh, &f.l, None)
            .unwrap()
            .state
            .model;
        let (_, points) = eval_points(&model, &f.mesh, &f.l).unwrap();
        let verts = eval_points(&model, &f.mesh, &f.l).unwrap().0;
        let prob = Problem::new(&set, &verts, &model, cfg.eps).unwrap();
        let (t_out, t_cache) = model.trunk().forward_batch(points.trunk_in.view()).unwrap();
        let (b_out, b_cache) = model.branch().forward_batch(prob.branch_in.view()).unwrap();
        let (_, grads) = prob
            .evaluate(&prob.rows(), b_out.view(), t_out.view(), &points.mask, true)
            .unwrap();
        let (gb, gt) = grads.unwrap();
        let g_branch = model.branch().backward(&b_cache, gb.view()).unwrap();
        let g_trunk = model.trunk().backward(&t_cache, gt.view()).unwrap();

        let cost_of = |m: &DeepOnet| loss(&set, m, &f.mesh, &f.l, cfg.eps).unwrap();
        let step = 1e-6;
        for (which, grad) in [(0, &g_branch), (1, &g_trunk)] {
            let n = grad.len();
            for j in (0..n).step_by(n / 25 + 1) {
                let shifted = |d: f64| {
                    let mut m = model.clone();
                    let params = if which == 0 {
                        m.branch_mut().params_mut()
                    } else {
                        m.trunk_mut().params_mut()
                    };
                    params[j] += d;
                    cost_of(&m)
                };
                let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
                let scale = fd.abs().max(grad[j].abs()).max(1e-3);
                assert!(
                    (fd - grad[j]).abs() <= 1e-5 * scale,
                    "net {which} param {j}: {fd} vs {}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let f = fixture(4);
        let train_set: Vec<&Snapshot> = f.snapshots[..3].iter().collect();
        let val: Vec<&Snapshot> = f.snapshots[3..].iter().collect();
        let whole = fit(&tiny(20), &train_set, &val, &f.mesh, &f.l, None).unwrap();
        let first = fit(&tiny(12), &train_set, &val, &f.mesh, &f.l, None).unwrap();
        let rest = fit(&tiny(8), &train_set, &val, &f.mesh, &f.l, Some(first.state)).unwrap();
        assert_eq!(rest.state.model, whole.state.model);
        assert_eq!(rest.history.first().unwrap().epoch, 13);
        assert_eq!(&whole.history[12..], &rest.history[..]);
    }

    #[test]
    fn mini_batches_differ_but_are_seeded() {
        let f = fixture(6);
        let cfg = TrainConfig {
            batch_size: Some(2),
            split_ratio: 0.7,
            ..tiny(10)
        };
        let a = train(&cfg, &f.snapshots, &f.mesh, &f.l).unwrap();
        let b = train(&cfg, &f.snapshots, &f.mesh, &f.l).unwrap();
        assert_eq!(a.model(), b.model());
        let full = train(
            &TrainConfig {
                batch_size: None,
                ..cfg
            },
            &f.snapshots,
            &f.mesh,
            &f.l,
        )
        .unwrap();
        assert_ne!(a.model(), full.model());
    }

    #[test]
    fn divergence_reports_epoch() {
        let f = fixture(4);
        let cfg = TrainConfig {
            lr: 1e300,
            ..tiny(5)
        };
        match train(&cfg, &f.snapshots, &f.mesh, &f.l) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!(
                "expected divergence, got {:?}",
                other.map(|o| o.final_train_loss)
            ),
        }
    }
}
