//! Task descriptions and multi-task datasets.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    L1,
    Cosine,
}

/// A named metric and whether lower values are better.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub lower_is_better: bool,
}

impl MetricSpec {
    pub fn new(name: &str, lower_is_better: bool) -> Self {
        Self {
            name: name.to_string(),
            lower_is_better,
        }
    }

    /// The metrics reported for a loss kind.
    pub fn defaults_for(kind: LossKind) -> Vec<MetricSpec> {
        match kind {
            LossKind::CrossEntropy => vec![MetricSpec::new("accuracy", false)],
            LossKind::L1 => vec![
                MetricSpec::new("abs_error", true),
                MetricSpec::new("rel_error", true),
            ],
            LossKind::Cosine => vec![
                MetricSpec::new("mean_angle_deg", true),
                MetricSpec::new("cosine_similarity", false),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub loss_kind: LossKind,
    /// Width of the head output (number of classes for cross-entropy).
    pub output_dim: usize,
    pub metrics: Vec<MetricSpec>,
}

impl TaskSpec {
    pub fn new(name: &str, loss_kind: LossKind, output_dim: usize) -> Result<Self> {
        let spec = Self {
            name: name.to_string(),
            loss_kind,
            output_dim,
            metrics: MetricSpec::defaults_for(loss_kind),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(invalid(format!("task `{}` has no metrics", self.name)));
        }
        if self.output_dim == 0 || (self.loss_kind == LossKind::CrossEntropy && self.output_dim < 2) {
            return Err(invalid(format!("task `{}` output width {}", self.name, self.output_dim)));
        }
        Ok(())
    }
}

/// Supervision for one task over a whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Dense(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Dense(t) => t.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Result<Targets> {
        Ok(match self {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: rows
                    .iter()
                    .map(|&r| {
                        labels
                            .get(r)
                            .copied()
                            .ok_or_else(|| Error::OutOfRange(format!("row {r}")))
                    })
                    .collect::<Result<_>>()?,
                classes: *classes,
            },
            Targets::Dense(t) => Targets::Dense(t.select_rows(rows)?),
        })
    }

    /// Whether these targets fit a task's loss kind and output width.
    pub fn check_against(&self, task: &TaskSpec) -> Result<()> {
        let ok = match (self, task.loss_kind) {
            (Targets::Classes { classes, .. }, LossKind::CrossEntropy) => *classes == task.output_dim,
            (Targets::Dense(t), LossKind::L1 | LossKind::Cosine) => {
                t.shape().len() == 2 && t.shape()[1] == task.output_dim
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("targets do not match task `{}`", task.name)))
        }
    }
}

/// Inputs shared by all tasks plus one target set per task.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskDataset {
    pub inputs: Tensor,
    pub targets: Vec<Targets>,
}

impl MultiTaskDataset {
    pub fn new(inputs: Tensor, targets: Vec<Targets>) -> Result<Self> {
        let (n, _) = inputs.dims2()?;
        if targets.iter().any(|t| t.len() != n) {
            return Err(invalid("every task needs one target per input row"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn task_count(&self) -> usize {
        self.targets.len()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<MultiTaskDataset> {
        Ok(MultiTaskDataset {
            inputs: self.inputs.select_rows(rows)?,
            targets: self
                .targets
                .iter()
                .map(|t| t.select(rows))
                .collect::<Result<_>>()?,
        })
    }

    /// Keeps only the listed tasks, in the given order.
    pub fn with_tasks(&self, tasks: &[usize]) -> MultiTaskDataset {
        MultiTaskDataset {
            inputs: self.inputs.clone(),
            targets: tasks.iter().map(|&k| self.targets[k].clone()).collect(),
        }
    }
}
