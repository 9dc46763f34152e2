//! Task losses, the sparsity and sharing regularizers, and the weighted total.
//!
//! Task losses are batch means. Both regularizers act on execution
//! probabilities α (after the logistic link), not on raw logits.

use serde::{Deserialize, Serialize};

use crate::data::{LossKind, Targets};
use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Var, LOG_FLOOR};
use crate::policy::PolicyLogits;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub task_weights: Vec<f64>,
    pub sparsity: f64,
    pub sharing: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.task_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("task weights must be positive"));
        }
        if !(self.sparsity >= 0.0 && self.sharing >= 0.0) {
            return Err(invalid("regularizer weights must be non-negative"));
        }
        Ok(())
    }
}

/// Records the batch-mean loss of `prediction` (`[batch, out]`) against
/// `target` for the given batch.
pub fn task_loss(g: &mut Graph, kind: LossKind, prediction: Var, target: &Targets) -> Result<Var> {
    let batch = target.len();
    if batch == 0 {
        return Err(invalid("empty batch"));
    }
    match (kind, target) {
        (LossKind::CrossEntropy, Targets::Classes { labels, classes }) => {
            let mut onehot = vec![0.0; batch * classes];
            for (r, &c) in labels.iter().enumerate() {
                if c >= *classes {
                    return Err(Error::OutOfRange(format!("class {c} of {classes}")));
                }
                onehot[r * classes + c] = 1.0;
            }
            let onehot = g.constant(Tensor::matrix(batch, *classes, onehot)?);
            let p = g.softmax(prediction);
            let logp = g.log(p);
            let picked = g.mul(onehot, logp);
            let total = g.sum(picked);
            Ok(g.scale(total, -1.0 / batch as f64))
        }
        (LossKind::L1, Targets::Dense(t)) => {
            let t = g.constant(t.clone());
            let d = g.sub(prediction, t);
            let a = g.abs(d);
            Ok(g.mean(a))
        }
        (LossKind::Cosine, Targets::Dense(t)) => {
            let (rows, cols) = t.dims2()?;
            let mut unit = t.data().to_vec();
            for (r, row) in unit.chunks_mut(cols).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(invalid(format!("target row {r} has zero norm")));
                }
                row.iter_mut().for_each(|v| *v /= norm);
            }
            let unit = g.constant(Tensor::matrix(rows, cols, unit)?);
            let sq = g.mul(prediction, prediction);
            let norm2 = g.sum_last_axis(sq);
            let norm = g.sqrt(norm2);
            // zero-norm predictions fail the forward pass with DivisionByZero
            let p = g.div(prediction, norm);
            let dots = g.mul(p, unit);
            let cos = g.sum_last_axis(dots);
            let mean = g.mean(cos);
            let neg = g.scale(mean, -1.0);
            Ok(g.add_scalar(neg, 1.0))
        }
        _ => Err(invalid(format!("{kind:?} loss does not accept these targets"))),
    }
}

/// `Σ_{l,k} log α_{l,k}` for `alpha` of shape `[L, K]`.
pub fn sparsity_loss(g: &mut Graph, alpha: Var) -> Var {
    let logs = g.log(alpha);
    g.sum(logs)
}

/// `Σ_{k1<k2} Σ_l ((L − l)/L)·|α_{l,k1} − α_{l,k2}|` with blocks numbered
/// `l = 1..L`, for `alpha` of shape `[L, K]`. Zero for a single task.
pub fn sharing_loss(g: &mut Graph, alpha: Var, blocks: usize, tasks: usize) -> Result<Var> {
    if blocks == 0 || tasks == 0 {
        return Err(invalid("empty policy"));
    }
    let weights: Vec<f64> = (1..=blocks)
        .map(|l| (blocks - l) as f64 / blocks as f64)
        .collect();
    let weights = g.constant(Tensor::matrix(blocks, 1, weights)?);
    let cols: Vec<Var> = (0..tasks).map(|k| g.column(alpha, k)).collect();
    let mut total = g.constant(Tensor::scalar(0.0));
    for k1 in 0..tasks {
        for k2 in k1 + 1..tasks {
            let d = g.sub(cols[k1], cols[k2]);
            let a = g.abs(d);
            let w = g.mul(a, weights);
            let s = g.sum(w);
            total = g.add(total, s);
        }
    }
    Ok(total)
}

/// `Σ_k λ_k·L_k + λ_sp·L_sparsity + λ_sh·L_sharing`. With `alpha = None`,
/// or both regularizer weights zero, only the task term is recorded.
pub fn total_loss(
    g: &mut Graph,
    task_losses: &[Var],
    alpha: Option<(Var, usize, usize)>,
    weights: &LossWeights,
) -> Result<Var> {
    if task_losses.len() != weights.task_weights.len() || task_losses.is_empty() {
        return Err(invalid(format!(
            "{} task losses for {} task weights",
            task_losses.len(),
            weights.task_weights.len()
        )));
    }
    let mut total = g.scale(task_losses[0], weights.task_weights[0]);
    for (l, w) in task_losses.iter().zip(&weights.task_weights).skip(1) {
        let s = g.scale(*l, *w);
        total = g.add(total, s);
    }
    if let Some((alpha, blocks, tasks)) = alpha {
        if weights.sparsity > 0.0 {
            let sp = sparsity_loss(g, alpha);
            let sp = g.scale(sp, weights.sparsity);
            total = g.add(total, sp);
        }
        if weights.sharing > 0.0 && tasks > 1 {
            let sh = sharing_loss(g, alpha, blocks, tasks)?;
            let sh = g.scale(sh, weights.sharing);
            total = g.add(total, sh);
        }
    }
    Ok(total)
}

/// Sparsity regularizer evaluated directly on a policy.
pub fn sparsity_value(logits: &PolicyLogits) -> f64 {
    logits.alpha().iter().map(|a| a.max(LOG_FLOOR).ln()).sum()
}

/// Sharing regularizer evaluated directly on a policy.
pub fn sharing_value(logits: &PolicyLogits) -> f64 {
    let (blocks, tasks) = (logits.blocks(), logits.tasks());
    let alpha = logits.alpha();
    let mut total = 0.0;
    for k1 in 0..tasks {
        for k2 in k1 + 1..tasks {
            for l in 0..blocks {
                let w = (blocks - (l + 1)) as f64 / blocks as f64;
                total += w * (alpha[l * tasks + k1] - alpha[l * tasks + k2]).abs();
            }
        }
    }
    total
}
