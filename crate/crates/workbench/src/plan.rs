//! Plan execution across seeds and the cross-seed summary.

use std::collections::BTreeMap;
use std::path::Path;

use adashare_core::report::{to_rounded_json, ResultsDoc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::WorkbenchConfig;
use crate::error::Result;
use crate::io::write_atomic;
use crate::runs::Workspace;

/// A configuration viewed as the list of experiments it asks for.
pub type ExperimentPlan = WorkbenchConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Δ_T keyed by seed.
    pub per_seed: BTreeMap<u64, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Validation Δ_T of every run name across seeds.
    pub runs: BTreeMap<String, RunSummary>,
}

impl Summary {
    pub fn from_docs(config_hash: &str, docs: &[ResultsDoc]) -> Self {
        let mut per_run: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
        for doc in docs {
            for run in &doc.runs {
                per_run.entry(run.name.clone()).or_default().insert(doc.seed, run.delta_overall);
            }
        }
        let runs = per_run
            .into_iter()
            .map(|(name, per_seed)| {
                let n = per_seed.len() as f64;
                let values = per_seed.values();
                let summary = RunSummary {
                    mean: values.clone().sum::<f64>() / n,
                    min: values.clone().copied().fold(f64::INFINITY, f64::min),
                    max: values.copied().fold(f64::NEG_INFINITY, f64::max),
                    per_seed,
                };
                (name, summary)
            })
            .collect();
        let mut seeds: Vec<u64> = docs.iter().map(|d| d.seed).collect();
        seeds.sort_unstable();
        Self {
            config_hash: config_hash.to_string(),
            seeds,
            runs,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(to_rounded_json(self)?)
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

/// Runs `f` on a pool of `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(pool(workers)?.install(f))
}

/// Executes every run of `plan` for every seed under `root`, skipping runs
/// that already completed, then writes `summary.json`. Seeds run in
/// parallel; results do not depend on the number of workers.
pub fn run_plan(root: &Path, plan: ExperimentPlan, workers: Option<usize>) -> Result<Summary> {
    let seeds = plan.seeds.clone();
    let ws = Workspace::open(root, plan)?;
    let docs = with_workers(workers, || {
        seeds
            .par_iter()
            .map(|&s| ws.seed(s).run_all())
            .collect::<Result<Vec<_>>>()
    })??;
    write_summary(&ws, &docs)
}

/// Regenerates results, heatmaps and the summary of every seed directory
/// under `root` from stored artifacts.
pub fn render_workspace(root: &Path) -> Result<Summary> {
    let ws = Workspace::existing(root)?;
    let docs = ws
        .seeds_on_disk()?
        .into_iter()
        .map(|s| ws.seed(s).render())
        .collect::<Result<Vec<_>>>()?;
    write_summary(&ws, &docs)
}

fn write_summary(ws: &Workspace, docs: &[ResultsDoc]) -> Result<Summary> {
    let json = Summary::from_docs(ws.hash(), docs).to_json()?;
    write_atomic(&ws.root().join("summary.json"), json.as_bytes())?;
    // Hand back exactly what was written.
    Ok(serde_json::from_str(&json)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use adashare_core::report::RunEntry;

    fn doc(seed: u64, runs: &[(&str, f64)]) -> ResultsDoc {
        ResultsDoc {
            config_hash: "h".into(),
            seed,
            runs: runs
                .iter()
                .map(|&(name, d)| RunEntry {
                    name: name.into(),
                    decisions: None,
                    per_task: BTreeMap::new(),
                    delta_overall: d,
                    params: 0,
                    flops: 0,
                })
                .collect(),
            correlation: vec![],
        }
    }

    #[test]
    fn aggregates_per_run() {
        let docs = [
            doc(2, &[("single_task", 0.0), ("adashare", 3.0)]),
            doc(0, &[("single_task", 0.0), ("adashare", -1.0)]),
            doc(1, &[("single_task", 0.0), ("adashare", 4.0)]),
        ];
        let s = Summary::from_docs("h", &docs);
        assert_eq!(s.seeds, vec![0, 1, 2]);
        let a = &s.runs["adashare"];
        assert_eq!((a.mean, a.min, a.max), (2.0, -1.0, 4.0));
        assert_eq!(a.per_seed[&0], -1.0);
        assert_eq!(s.runs["single_task"].max, 0.0);
        let json = s.to_json().unwrap();
        let back: Summary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
