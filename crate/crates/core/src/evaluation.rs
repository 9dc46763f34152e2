//! Metrics, relative performance against single-task references, and task
//! correlation from policies.

use serde::{Deserialize, Serialize};

use crate::data::{LossKind, Targets};
use crate::error::{invalid, Error, Result};
use crate::policy::{DecisionMatrix, PolicyLogits};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub lower_is_better: bool,
}

impl Metric {
    pub fn new(name: &str, value: f64, lower_is_better: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            lower_is_better,
        }
    }
}

/// Signed mean percentage improvement of `task` over `reference`:
/// `(1/|M|) Σ_j (−1)^{l_j} (M_j − R_j) / R_j · 100`.
///
/// Metrics are matched by name, so their order does not matter.
pub fn relative_performance(task: &[Metric], reference: &[Metric]) -> Result<f64> {
    if task.is_empty() || task.len() != reference.len() {
        return Err(invalid(format!(
            "{} metrics against {} reference metrics",
            task.len(),
            reference.len()
        )));
    }
    let mut total = 0.0;
    for m in task {
        let r = reference
            .iter()
            .find(|r| r.name == m.name)
            .ok_or_else(|| invalid(format!("no reference value for `{}`", m.name)))?;
        if r.lower_is_better != m.lower_is_better {
            return Err(invalid(format!("direction of `{}` disagrees", m.name)));
        }
        if r.value == 0.0 {
            return Err(invalid(format!("reference value of `{}` is zero", m.name)));
        }
        let sign = if m.lower_is_better { -1.0 } else { 1.0 };
        total += sign * (m.value - r.value) / r.value * 100.0;
    }
    Ok(total / task.len() as f64)
}

/// Arithmetic mean of per-task Δ values.
pub fn overall_performance(deltas: &[f64]) -> Result<f64> {
    if deltas.is_empty() {
        return Err(invalid("no tasks"));
    }
    Ok(deltas.iter().sum::<f64>() / deltas.len() as f64)
}

/// Symmetric K×K matrix of cosine similarities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub values: Vec<Vec<f64>>,
}

/// Cosine similarity between the tasks' execution-probability vectors.
pub fn task_correlation(logits: &PolicyLogits) -> Result<CorrelationMatrix> {
    let cols: Vec<Vec<f64>> = (0..logits.tasks()).map(|k| logits.task_alpha(k)).collect();
    correlation_of_columns(&cols)
}

/// Cosine similarity between arbitrary task vectors.
pub fn correlation_of_columns(cols: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(k) = norms.iter().position(|n| *n == 0.0) {
        return Err(invalid(format!("task {k} has a zero-norm vector")));
    }
    let k = cols.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(CorrelationMatrix { values })
}

/// Evaluation metrics for one task's predictions.
///
/// - cross-entropy tasks: `accuracy` (higher is better)
/// - L1 tasks: `abs_error` = mean |p − t| and `rel_error` = Σ|p − t| / Σ|t|
///   (both lower is better)
/// - cosine tasks: `mean_angle_deg` (lower) and `cosine_similarity` (higher)
pub fn metric_suite(kind: LossKind, predictions: &Tensor, targets: &Targets) -> Result<Vec<Metric>> {
    let (rows, cols) = predictions.dims2()?;
    if rows != targets.len() || rows == 0 {
        return Err(invalid(format!(
            "{rows} predictions for {} targets",
            targets.len()
        )));
    }
    match (kind, targets) {
        (LossKind::CrossEntropy, Targets::Classes { labels, classes }) => {
            if cols != *classes {
                return Err(invalid(format!("{cols} logits for {classes} classes")));
            }
            let correct = labels
                .iter()
                .enumerate()
                .filter(|(r, &c)| argmax(predictions.row(*r)) == c)
                .count();
            Ok(vec![Metric::new("accuracy", correct as f64 / rows as f64, false)])
        }
        (LossKind::L1, Targets::Dense(t)) => {
            check_dense(predictions, t)?;
            let abs: f64 = predictions
                .data()
                .iter()
                .zip(t.data())
                .map(|(p, t)| (p - t).abs())
                .sum();
            let scale: f64 = t.data().iter().map(|v| v.abs()).sum();
            if scale == 0.0 {
                return Err(invalid("relative error undefined for all-zero targets"));
            }
            Ok(vec![
                Metric::new("abs_error", abs / t.len() as f64, true),
                Metric::new("rel_error", abs / scale, true),
            ])
        }
        (LossKind::Cosine, Targets::Dense(t)) => {
            check_dense(predictions, t)?;
            let mut cos_sum = 0.0;
            let mut angle_sum = 0.0;
            for r in 0..rows {
                let (p, q) = (predictions.row(r), t.row(r));
                let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if np == 0.0 || nq == 0.0 {
                    return Err(invalid(format!("zero-norm vector in row {r}")));
                }
                let c = (p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (np * nq)).clamp(-1.0, 1.0);
                cos_sum += c;
                angle_sum += c.acos().to_degrees();
            }
            Ok(vec![
                Metric::new("mean_angle_deg", angle_sum / rows as f64, true),
                Metric::new("cosine_similarity", cos_sum / rows as f64, false),
            ])
        }
        _ => Err(invalid(format!("{kind:?} metrics do not accept these targets"))),
    }
}

fn check_dense(p: &Tensor, t: &Tensor) -> Result<()> {
    if p.shape() != t.shape() {
        return Err(Error::InvalidArgument(format!(
            "prediction shape {:?} vs target shape {:?}",
            p.shape(),
            t.shape()
        )));
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub metrics: Vec<Metric>,
    /// Percent improvement over the single-task reference.
    pub delta: f64,
}

/// Evaluated outcome of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub decisions: Option<DecisionMatrix>,
    pub per_task: Vec<TaskReport>,
    pub delta_overall: f64,
    pub params: u64,
    pub flops: u64,
}

impl MetricsReport {
    /// Builds a report, computing Δ for each task against `reference`.
    pub fn from_metrics(
        name: &str,
        task_names: &[String],
        metrics: Vec<Vec<Metric>>,
        reference: &[Vec<Metric>],
        decisions: Option<DecisionMatrix>,
        params: u64,
        flops: u64,
    ) -> Result<Self> {
        if metrics.len() != task_names.len() || reference.len() != task_names.len() {
            return Err(invalid("metrics, reference and task names must align"));
        }
        let per_task = task_names
            .iter()
            .zip(metrics)
            .zip(reference)
            .map(|((task, m), r)| {
                Ok(TaskReport {
                    task: task.clone(),
                    delta: relative_performance(&m, r)?,
                    metrics: m,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let deltas: Vec<f64> = per_task.iter().map(|t| t.delta).collect();
        Ok(Self {
            name: name.to_string(),
            decisions,
            delta_overall: overall_performance(&deltas)?,
            per_task,
            params,
            flops,
        })
    }

    pub fn task_metrics(&self) -> Vec<Vec<Metric>> {
        self.per_task.iter().map(|t| t.metrics.clone()).collect()
    }
}
