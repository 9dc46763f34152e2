//! Resumable runs inside a workspace directory.
//!
//! ```text
//! <root>/config.json                      resolved configuration
//! <root>/summary.json                     per-run Δ_T across seeds
//! <root>/seed-<s>/results.json            all runs of one seed
//! <root>/seed-<s>/data/                   exported splits (synth-gen)
//! <root>/seed-<s>/<run>/started.json      config hash of an attempt
//! <root>/seed-<s>/<run>/report.json       validation metrics and Δ
//! <root>/seed-<s>/<run>/manifest.json     written last; marks completion
//! <root>/seed-<s>/<run>/policy.csv        learned logits (policy runs)
//! <root>/seed-<s>/<run>/policy.json       phase-one record (policy runs)
//! <root>/seed-<s>/<run>/heatmap.svg
//! <root>/seed-<s>/<run>/checkpoint.bin    best retrained network
//! ```
//!
//! A run whose manifest exists is never recomputed. Any earlier attempt
//! under a different config hash is refused. Unfinished attempts are
//! recomputed from scratch, which yields the same bytes since every run is
//! a pure function of the configuration and its seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use adashare_core::evaluation::{task_correlation, Metric, MetricsReport};
use adashare_core::network::{subnetwork_for, NetworkConfig};
use adashare_core::policy::{DecisionMatrix, PolicyLogits};
use adashare_core::report::{heatmap_svg, to_rounded_json, ResultsDoc};
use adashare_core::rng::derive_seed;
use adashare_core::synth::{generate_synthetic, SynthBenchConfig, SynthData};
use adashare_core::trainer::{
    baseline_seed, evaluate, learn_policy, run_baseline, sample_and_retrain, sample_seed, BaselineKind,
    PolicyOutcome, TrainConfig,
};
use adashare_core::ParamStore;
use serde::{Deserialize, Serialize};

use crate::config::{Variant, WorkbenchConfig};
use crate::error::{Result, WorkbenchError};
use crate::io::{dataset_csv, read_bytes, read_json, read_text, write_atomic, write_json};

pub const SINGLE_TASK: &str = "single_task";
pub const HARD_SHARING: &str = "hard_sharing";
pub const ADASHARE: &str = "adashare";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    SingleTask,
    HardSharing,
    Adashare,
    Random1,
    Random2,
}

impl From<BaselineKind> for RunKind {
    fn from(k: BaselineKind) -> Self {
        match k {
            BaselineKind::SingleTask => RunKind::SingleTask,
            BaselineKind::HardSharing => RunKind::HardSharing,
            BaselineKind::Random1 => RunKind::Random1,
            BaselineKind::Random2 => RunKind::Random2,
        }
    }
}

/// Phase-one record of a policy run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub config_hash: String,
    pub seed: u64,
    pub warmup_iters: u64,
    pub policy_iters: u64,
    /// Policy iterations per curriculum epoch.
    pub epoch_len: u64,
    pub final_epoch: u64,
    pub tau_start: f64,
    pub tau_min: f64,
    pub final_tau: f64,
    /// Raw logits every `eval_every` policy iterations and at the end.
    pub trace: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: u64,
    pub delta_overall: f64,
    pub decisions: DecisionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    pub warmup_iters: u64,
    pub policy_iters: u64,
    pub retrain_iters: u64,
    pub eval_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curriculum_epochs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_tau: Option<f64>,
}

/// Completion record of one run. Echoes the resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_key: String,
    pub kind: RunKind,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub network: NetworkConfig,
    pub bench: SynthBenchConfig,
    pub train: TrainConfig,
    pub derived_seeds: BTreeMap<String, u64>,
    pub phases: Phases,
    pub delta_overall: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_index: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Started {
    config_hash: String,
}

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed-{seed}")
}

/// An output directory bound to one configuration.
pub struct Workspace {
    root: PathBuf,
    config: WorkbenchConfig,
    hash: String,
}

impl Workspace {
    /// Binds `root` to `config`, refusing a directory created under a
    /// different config hash.
    pub fn open(root: &Path, config: WorkbenchConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let path = root.join("config.json");
        if path.exists() {
            let stored = WorkbenchConfig::from_json(&read_text(&path)?)?;
            if stored.hash() != hash {
                return Err(WorkbenchError::HashMismatch {
                    path,
                    expected: hash,
                    found: stored.hash(),
                });
            }
        } else {
            write_atomic(&path, config.to_json()?.as_bytes())?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            config,
            hash,
        })
    }

    /// Reopens a workspace from its stored configuration.
    pub fn existing(root: &Path) -> Result<Self> {
        let path = root.join("config.json");
        if !path.exists() {
            return Err(WorkbenchError::missing(path, "not a workbench output directory"));
        }
        let config = WorkbenchConfig::from_json(&read_text(&path)?)?;
        Self::open(root, config)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &WorkbenchConfig {
        &self.config
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn seed(&self, seed: u64) -> SeedRuns<'_> {
        SeedRuns {
            ws: self,
            seed,
            dir: self.root.join(seed_dir_name(seed)),
            data: OnceLock::new(),
        }
    }

    /// Seeds with a directory on disk, ascending.
    pub fn seeds_on_disk(&self) -> Result<Vec<u64>> {
        let entries = std::fs::read_dir(&self.root).map_err(|source| WorkbenchError::Io {
            path: self.root.clone(),
            source,
        })?;
        let mut seeds: Vec<u64> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().to_str()?.strip_prefix("seed-")?.parse().ok())
            .collect();
        seeds.sort_unstable();
        Ok(seeds)
    }
}

/// The runs of one seed.
pub struct SeedRuns<'w> {
    ws: &'w Workspace,
    seed: u64,
    dir: PathBuf,
    data: OnceLock<SynthData>,
}

impl SeedRuns<'_> {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn config(&self) -> &WorkbenchConfig {
        &self.ws.config
    }

    fn train_config(&self) -> TrainConfig {
        self.config().train_for(self.seed)
    }

    pub fn data(&self) -> Result<&SynthData> {
        if let Some(d) = self.data.get() {
            return Ok(d);
        }
        let d = generate_synthetic(&self.config().bench_for(self.seed))?;
        Ok(self.data.get_or_init(|| d))
    }

    fn task_names(&self) -> Vec<String> {
        self.config().bench.tasks.iter().map(|t| t.name.clone()).collect()
    }

    /// Writes the generated splits as CSV plus the task descriptions.
    pub fn export_data(&self) -> Result<PathBuf> {
        let data = self.data()?;
        let dir = self.dir.join("data");
        for (name, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
            write_atomic(&dir.join(format!("{name}.csv")), dataset_csv(&data.tasks, split).as_bytes())?;
        }
        write_json(&dir.join("tasks.json"), &self.config().bench_for(self.seed))?;
        Ok(dir)
    }

    /// The stored manifest of a completed run.
    pub fn completed(&self, name: &str) -> Result<Option<RunManifest>> {
        let path = self.run_dir(name).join("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let m: RunManifest = read_json(&path)?;
        self.check_hash(&path, &m.config_hash)?;
        Ok(Some(m))
    }

    fn check_hash(&self, path: &Path, found: &str) -> Result<()> {
        if found != self.ws.hash {
            return Err(WorkbenchError::HashMismatch {
                path: path.to_path_buf(),
                expected: self.ws.hash.clone(),
                found: found.to_string(),
            });
        }
        Ok(())
    }

    fn begin(&self, name: &str) -> Result<()> {
        let path = self.run_dir(name).join("started.json");
        if path.exists() {
            let s: Started = read_json(&path)?;
            self.check_hash(&path, &s.config_hash)?;
        }
        write_json(
            &path,
            &Started {
                config_hash: self.ws.hash.clone(),
            },
        )
    }

    pub fn report(&self, name: &str) -> Result<MetricsReport> {
        self.completed(name)?
            .ok_or_else(|| WorkbenchError::missing(self.run_dir(name), "run has not completed"))?;
        read_json(&self.run_dir(name).join("report.json"))
    }

    fn manifest(&self, name: &str, kind: RunKind, variant: Option<&Variant>, train: &TrainConfig) -> RunManifest {
        RunManifest {
            run_key: format!("{}/{name}", seed_dir_name(self.seed)),
            kind,
            config_hash: self.ws.hash.clone(),
            seed: self.seed,
            variant: variant.cloned(),
            network: self.config().network(),
            bench: self.config().bench_for(self.seed),
            train: train.clone(),
            derived_seeds: BTreeMap::new(),
            phases: Phases {
                warmup_iters: 0,
                policy_iters: 0,
                retrain_iters: train.retrain_iters,
                eval_every: train.eval_every,
                curriculum_epochs: None,
                final_tau: None,
            },
            delta_overall: 0.0,
            samples: Vec::new(),
            best_index: None,
        }
    }

    fn finish(&self, name: &str, report: &MetricsReport, mut manifest: RunManifest) -> Result<MetricsReport> {
        let dir = self.run_dir(name);
        write_json(&dir.join("report.json"), report)?;
        manifest.delta_overall = report.delta_overall;
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(report.clone())
    }

    /// Single-task reference metrics, computing them if needed.
    pub fn reference(&self) -> Result<Vec<Vec<Metric>>> {
        Ok(self.baseline(BaselineKind::SingleTask, None)?.task_metrics())
    }

    /// Runs (or loads) a baseline stored under the kind's own name, or under
    /// `variant` for random baselines listed in the plan.
    pub fn baseline(&self, kind: BaselineKind, variant: Option<&Variant>) -> Result<MetricsReport> {
        let name = match (kind, variant) {
            (_, Some(v)) => v.name.clone(),
            (BaselineKind::SingleTask, None) => SINGLE_TASK.to_string(),
            (BaselineKind::HardSharing, None) => HARD_SHARING.to_string(),
            (BaselineKind::Random1, None) => "random1".to_string(),
            (BaselineKind::Random2, None) => "random2".to_string(),
        };
        if self.completed(&name)?.is_some() {
            return self.report(&name);
        }
        let reference = match kind {
            BaselineKind::SingleTask => None,
            _ => Some(self.reference()?),
        };
        let decisions = match kind {
            BaselineKind::Random1 | BaselineKind::Random2 => {
                if self.completed(ADASHARE)?.is_none() {
                    return Err(WorkbenchError::missing(
                        self.run_dir(ADASHARE),
                        "random baselines need a completed AdaShare run",
                    ));
                }
                self.report(ADASHARE)?.decisions
            }
            _ => None,
        };
        self.begin(&name)?;
        let data = self.data()?;
        let train = self.train_config();
        let mut report = run_baseline(
            kind,
            &self.config().network(),
            &data.tasks,
            &train,
            &data.train,
            &data.val,
            reference.as_deref(),
            decisions.as_ref(),
        )?;
        report.name = name.clone();
        let mut m = self.manifest(&name, kind.into(), variant, &train);
        m.derived_seeds.insert("baseline".into(), baseline_seed(&train, kind));
        self.finish(&name, &report, m)
    }

    fn policy_train(&self, variant: Option<&Variant>) -> TrainConfig {
        let base = self.train_config();
        variant.map_or(base.clone(), |v| v.apply(&base))
    }

    /// Phase one of a policy run, or its stored logits.
    pub fn policy(&self, variant: Option<&Variant>) -> Result<(PolicyLogits, PolicyRecord)> {
        let name = variant.map_or(ADASHARE, |v| v.name.as_str());
        let dir = self.run_dir(name);
        let record_path = dir.join("policy.json");
        if record_path.exists() {
            let record: PolicyRecord = read_json(&record_path)?;
            self.check_hash(&record_path, &record.config_hash)?;
            let logits = PolicyLogits::from_csv(&read_text(&dir.join("policy.csv"))?)?;
            return Ok((logits, record));
        }
        self.begin(name)?;
        let data = self.data()?;
        let train = self.policy_train(variant);
        let (_, outcome) = learn_policy(self.config().network(), &data.tasks, &train, &data.train, &mut |_| {})?;
        let PolicyOutcome {
            logits,
            trace,
            warmup_iters,
            policy_iters,
            final_epoch,
            final_tau,
            epoch_len,
        } = outcome;
        write_atomic(&dir.join("policy.csv"), logits.to_csv().as_bytes())?;
        write_atomic(&dir.join("heatmap.svg"), heatmap_svg(&logits, &self.task_names())?.as_bytes())?;
        let record = PolicyRecord {
            config_hash: self.ws.hash.clone(),
            seed: self.seed,
            warmup_iters,
            policy_iters,
            epoch_len,
            final_epoch,
            tau_start: train.anneal.tau_start,
            tau_min: train.anneal.tau_min,
            final_tau,
            trace,
        };
        write_json(&record_path, &record)?;
        Ok((logits, record))
    }

    /// Phase two of a policy run: sample, retrain, keep the best.
    pub fn retrain(&self, variant: Option<&Variant>) -> Result<MetricsReport> {
        let name = variant.map_or(ADASHARE, |v| v.name.as_str());
        if self.completed(name)?.is_some() {
            return self.report(name);
        }
        let (logits, record) = self.policy(variant)?;
        let reference = self.reference()?;
        self.begin(name)?;
        let data = self.data()?;
        let train = self.policy_train(variant);
        let net = self.config().network();
        let art = sample_and_retrain(&net, &data.tasks, &logits, &train, &data.train, &data.val, &reference)?;
        let dir = self.run_dir(name);
        let mut bytes = Vec::new();
        art.best.store.save(&mut bytes)?;
        write_atomic(&dir.join("checkpoint.bin"), &bytes)?;
        let mut report = art.retrain_results[art.best_index].clone();
        report.name = name.to_string();
        let mut m = self.manifest(name, RunKind::Adashare, variant, &train);
        m.derived_seeds.insert("init".into(), derive_seed(self.seed, "init", 0));
        m.derived_seeds.insert("samples".into(), derive_seed(self.seed, "samples", 0));
        m.phases.warmup_iters = record.warmup_iters;
        m.phases.policy_iters = record.policy_iters;
        m.phases.curriculum_epochs = Some(record.final_epoch);
        m.phases.final_tau = Some(record.final_tau);
        m.samples = art
            .retrain_results
            .iter()
            .enumerate()
            .map(|(i, r)| SampleRecord {
                index: i,
                seed: sample_seed(&train, i),
                delta_overall: r.delta_overall,
                decisions: art.sampled_decisions[i].clone(),
            })
            .collect();
        m.best_index = Some(art.best_index);
        self.finish(name, &report, m)
    }

    /// Every run of the plan for this seed, in plan order.
    pub fn run_all(&self) -> Result<ResultsDoc> {
        self.baseline(BaselineKind::SingleTask, None)?;
        self.baseline(BaselineKind::HardSharing, None)?;
        self.retrain(None)?;
        for v in &self.config().variants {
            match v.baseline {
                Some(kind) => self.baseline(kind, Some(v))?,
                None => self.retrain(Some(v))?,
            };
        }
        self.render()
    }

    fn run_names(&self) -> Vec<String> {
        [SINGLE_TASK, HARD_SHARING, ADASHARE]
            .into_iter()
            .map(str::to_string)
            .chain(self.config().variants.iter().map(|v| v.name.clone()))
            .collect()
    }

    /// Rebuilds `results.json` and every heatmap from stored artifacts of
    /// the completed runs. Trains nothing.
    pub fn render(&self) -> Result<ResultsDoc> {
        let mut reports = Vec::new();
        for name in self.run_names() {
            if self.completed(&name)?.is_some() {
                reports.push(self.report(&name)?);
            }
            let csv = self.run_dir(&name).join("policy.csv");
            if csv.exists() {
                let logits = PolicyLogits::from_csv(&read_text(&csv)?)?;
                let svg = heatmap_svg(&logits, &self.task_names())?;
                write_atomic(&self.run_dir(&name).join("heatmap.svg"), svg.as_bytes())?;
            }
        }
        let csv = self.run_dir(ADASHARE).join("policy.csv");
        if !csv.exists() {
            return Err(WorkbenchError::missing(csv, "the AdaShare policy is needed for task correlation"));
        }
        let correlation = task_correlation(&PolicyLogits::from_csv(&read_text(&csv)?)?)?;
        let doc = ResultsDoc::new(&self.ws.hash, self.seed, &reports, &correlation)
            .map_err(|_| WorkbenchError::missing(self.run_dir(SINGLE_TASK), "the single-task reference has not completed"))?;
        write_atomic(&self.dir.join("results.json"), doc.to_json()?.as_bytes())?;
        Ok(doc)
    }

    /// Test-split metrics of every retrained policy run with a checkpoint.
    pub fn evaluate_test(&self) -> Result<BTreeMap<String, Vec<TestMetrics>>> {
        let data = self.data()?;
        let net_config = self.config().network();
        let mut out = BTreeMap::new();
        for name in self.run_names() {
            let ckpt = self.run_dir(&name).join("checkpoint.bin");
            if self.completed(&name)?.is_none() || !ckpt.exists() {
                continue;
            }
            let report = self.report(&name)?;
            let u = report
                .decisions
                .ok_or_else(|| WorkbenchError::missing(self.run_dir(&name), "report has no decisions"))?;
            let (mut store, net) = subnetwork_for(&net_config, &u, 0)?;
            let saved = ParamStore::load(read_bytes(&ckpt)?.as_slice())?;
            store.copy_values_from(&saved)?;
            let train = self.config().variant(&name).map_or(self.train_config(), |v| v.apply(&self.train_config()));
            let (metrics, _) = evaluate(&net, &store, &u, &data.tasks, &train.weights.task_weights, &data.test)?;
            let entries = data
                .tasks
                .iter()
                .zip(metrics)
                .map(|(t, metrics)| TestMetrics {
                    task: t.name.clone(),
                    metrics,
                })
                .collect();
            out.insert(name, entries);
        }
        if out.is_empty() {
            return Err(WorkbenchError::missing(&self.dir, "no retrained checkpoint to evaluate"));
        }
        write_atomic(&self.dir.join("test_metrics.json"), to_rounded_json(&out)?.as_bytes())?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub task: String,
    pub metrics: Vec<Metric>,
}
