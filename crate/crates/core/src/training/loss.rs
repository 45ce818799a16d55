use crate::deeponet::{corrected_eval, DeepOnet};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField};

use super::Snapshot;

/// `(pred - target)^2 / ((h - target)^2 + eps)` for one component at one
/// point.
pub fn cost_term(h: f64, pred: f64, target: f64, eps: f64) -> f64 {
    let r = pred - target;
    let d = h - target;
    r * r / (d * d + eps)
}

/// Relative cost of corrected predictions (one field per snapshot).
///
/// Per-snapshot sums run over vertices in order with the x term before the
/// y term; snapshots are then added in ascending index order, so the value
/// does not depend on how the batch is ordered.
pub fn cost(batch: &[&Snapshot], predictions: &[NodalField], eps: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("cost of an empty batch".into()));
    }
    if batch.len() != predictions.len() {
        return Err(Error::Dimension {
            expected: batch.len(),
            actual: predictions.len(),
            context: "one prediction per snapshot",
        });
    }
    let mut per_snapshot = Vec::with_capacity(batch.len());
    for (s, u) in batch.iter().zip(predictions) {
        let n = s.target.n_vertices();
        u.check_len(n)?;
        let mut sum = 0.0;
        for i in 0..n {
            for c in 0..2 {
                let t = cost_term(s.harmonic.get(c, i), u.get(c, i), s.target.get(c, i), eps);
                if !t.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "cost term at snapshot {}, vertex {i}",
                        s.index
                    )));
                }
                sum += t;
            }
        }
        per_snapshot.push((s.index, sum));
    }
    per_snapshot.sort_by_key(|&(k, _)| k);
    Ok(per_snapshot.iter().map(|&(_, v)| v).sum::<f64>() / batch.len() as f64)
}

/// Cost of the model's corrected operator on a batch.
pub fn loss(
    batch: &[&Snapshot],
    model: &DeepOnet,
    mesh: &Mesh,
    l: &NodalField,
    eps: f64,
) -> Result<f64> {
    let predictions = batch
        .iter()
        .map(|s| corrected_eval(model, &s.g, mesh, &s.harmonic, l))
        .collect::<Result<Vec<_>>>()?;
    cost(batch, &predictions, eps)
}
