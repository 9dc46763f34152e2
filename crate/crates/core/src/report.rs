//! Results JSON and policy heatmaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, Result};
use crate::evaluation::{CorrelationMatrix, Metric, MetricsReport};
use crate::policy::{DecisionMatrix, PolicyLogits};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub metrics: Vec<Metric>,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub decisions: Option<DecisionMatrix>,
    pub per_task: BTreeMap<String, TaskEntry>,
    pub delta_overall: f64,
    pub params: u64,
    pub flops: u64,
}

impl From<&MetricsReport> for RunEntry {
    fn from(r: &MetricsReport) -> Self {
        Self {
            name: r.name.clone(),
            decisions: r.decisions.clone(),
            per_task: r
                .per_task
                .iter()
                .map(|t| {
                    (
                        t.task.clone(),
                        TaskEntry {
                            metrics: t.metrics.clone(),
                            delta: t.delta,
                        },
                    )
                })
                .collect(),
            delta_overall: r.delta_overall,
            params: r.params,
            flops: r.flops,
        }
    }
}

/// Top-level results document of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsDoc {
    pub config_hash: String,
    pub seed: u64,
    pub runs: Vec<RunEntry>,
    pub correlation: Vec<Vec<f64>>,
}

pub const SINGLE_TASK_RUN: &str = "single_task";

impl ResultsDoc {
    /// Fails when no single-task run is present, since Δ is undefined
    /// without it.
    pub fn new(
        config_hash: &str,
        seed: u64,
        reports: &[MetricsReport],
        correlation: &CorrelationMatrix,
    ) -> Result<Self> {
        if !reports.iter().any(|r| r.name == SINGLE_TASK_RUN) {
            return Err(invalid("results need the single-task reference run"));
        }
        Ok(Self {
            config_hash: config_hash.to_string(),
            seed,
            runs: reports.iter().map(RunEntry::from).collect(),
            correlation: correlation.values.clone(),
        })
    }

    pub fn run(&self, name: &str) -> Option<&RunEntry> {
        self.runs.iter().find(|r| r.name == name)
    }

    /// Pretty JSON with floats rounded to 6 significant digits, newline
    /// terminated.
    pub fn to_json(&self) -> Result<String> {
        to_rounded_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Rounds `x` to 6 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_sig(n.as_f64().expect("f64 number"));
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Serializes `value` as pretty JSON with floats rounded to 6 significant
/// digits and a trailing newline.
pub fn to_rounded_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// `L` columns by `K` rows of unit squares; each fill is the gray level
/// `round(255·(1 − α))`, so blocks a task always executes are black.
pub fn heatmap_svg(logits: &PolicyLogits, task_names: &[String]) -> Result<String> {
    let (blocks, tasks) = (logits.blocks(), logits.tasks());
    if task_names.len() != tasks {
        return Err(invalid(format!("{} names for {tasks} tasks", task_names.len())));
    }
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {blocks} {tasks}" width="{}" height="{}" shape-rendering="crispEdges">"#,
        blocks * 24,
        tasks * 24
    )
    .unwrap();
    for (k, name) in task_names.iter().enumerate() {
        for l in 0..blocks {
            let a = logits.execute_probability(l, k)?;
            let gray = (255.0 * (1.0 - a)).round() as u8;
            writeln!(
                s,
                r#"  <rect x="{l}" y="{k}" width="1" height="1" fill="rgb({gray},{gray},{gray})"><title>{} block {l}: {a:.4}</title></rect>"#,
                escape(name)
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
