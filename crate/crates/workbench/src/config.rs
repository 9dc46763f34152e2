//! Workbench configuration: benchmark, trunk depth, training schedule,
//! seeds and plan variants in one JSON document.
//!
//! Every field is required when reading a file; the built-in preset is the
//! only source of defaults and is echoed into each run manifest. The `seed`
//! fields inside `bench` and `train` are replaced by the seed of each run.

use std::collections::BTreeSet;
use std::path::Path;

use adashare_core::network::NetworkConfig;
use adashare_core::synth::SynthBenchConfig;
use adashare_core::trainer::{BaselineKind, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, WorkbenchError};

pub const PRESET_DEFAULT: &str = "preset_default";

/// Names taken by the runs every plan performs.
pub const RESERVED_RUNS: [&str; 3] = ["single_task", "hard_sharing", "adashare"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkbenchConfig {
    pub bench: SynthBenchConfig,
    pub blocks: usize,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

/// A plan entry next to the three standard runs. Either a random baseline
/// drawn against the AdaShare decisions of the same seed, or a full AdaShare
/// run with some toggles or regularizer weights overridden.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curriculum: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharing: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_sparsity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_sharing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineKind>,
}

impl Variant {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    fn has_overrides(&self) -> bool {
        self.curriculum.is_some()
            || self.sparsity.is_some()
            || self.sharing.is_some()
            || self.lambda_sparsity.is_some()
            || self.lambda_sharing.is_some()
    }

    /// `base` with this variant's overrides applied.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        if let Some(on) = self.curriculum {
            c.toggles.curriculum = on;
        }
        if let Some(on) = self.sparsity {
            c.toggles.sparsity = on;
        }
        if let Some(on) = self.sharing {
            c.toggles.sharing = on;
        }
        if let Some(w) = self.lambda_sparsity {
            c.weights.sparsity = w;
        }
        if let Some(w) = self.lambda_sharing {
            c.weights.sharing = w;
        }
        c
    }

    fn validate(&self, base: &TrainConfig, tasks: usize) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(WorkbenchError::config(format!(
                "variant name `{}` must be non-empty ASCII letters, digits, `_` or `-`",
                self.name
            )));
        }
        if RESERVED_RUNS.contains(&self.name.as_str()) {
            return Err(WorkbenchError::config(format!("variant name `{}` is reserved", self.name)));
        }
        match self.baseline {
            None => {}
            Some(BaselineKind::Random1 | BaselineKind::Random2) if !self.has_overrides() => {}
            Some(BaselineKind::Random1 | BaselineKind::Random2) => {
                return Err(WorkbenchError::config(format!(
                    "variant `{}`: random baselines take no policy overrides",
                    self.name
                )))
            }
            Some(kind) => {
                return Err(WorkbenchError::config(format!(
                    "variant `{}`: {kind:?} already runs for every seed",
                    self.name
                )))
            }
        }
        self.apply(base)
            .validate(tasks)
            .map_err(|e| WorkbenchError::config(format!("variant `{}`: {e}", self.name)))
    }
}

/// The part of the configuration that determines numerics for a given seed.
#[derive(Serialize)]
struct Hashed<'a> {
    bench: &'a SynthBenchConfig,
    blocks: usize,
    train: &'a TrainConfig,
    variants: &'a [Variant],
}

impl WorkbenchConfig {
    pub fn preset_default() -> Self {
        let bench = SynthBenchConfig::preset_default();
        let train = TrainConfig::preset_default(bench.tasks.len());
        let toggle = |name: &str, f: fn(&mut Variant)| {
            let mut v = Variant::named(name);
            f(&mut v);
            v
        };
        Self {
            bench,
            blocks: 8,
            train,
            seeds: vec![0, 1, 2, 3, 4],
            variants: vec![
                toggle("no_curriculum", |v| v.curriculum = Some(false)),
                toggle("no_sparsity", |v| v.sparsity = Some(false)),
                toggle("with_sharing", |v| v.lambda_sharing = Some(0.05)),
                toggle("random1", |v| v.baseline = Some(BaselineKind::Random1)),
                toggle("random2", |v| v.baseline = Some(BaselineKind::Random2)),
            ],
        }
    }

    /// `preset_default` or a path to a JSON file.
    pub fn load(spec: &str) -> Result<Self> {
        let config = if spec == PRESET_DEFAULT {
            Self::preset_default()
        } else {
            let text = std::fs::read_to_string(Path::new(spec))
                .map_err(|e| WorkbenchError::config(format!("cannot read config `{spec}`: {e}")))?;
            Self::from_json(&text)?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| WorkbenchError::config(format!("config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.bench.validate().map_err(|e| WorkbenchError::config(format!("bench: {e}")))?;
        if self.blocks == 0 {
            return Err(WorkbenchError::config("blocks must be positive"));
        }
        let tasks = self.bench.tasks.len();
        self.train.validate(tasks).map_err(|e| WorkbenchError::config(format!("train: {e}")))?;
        if self.train.anneal.total_steps != self.train.policy_iters().max(1) {
            return Err(WorkbenchError::config(format!(
                "train.anneal.total_steps is {} but the policy phase has {} iterations",
                self.train.anneal.total_steps,
                self.train.policy_iters()
            )));
        }
        if self.seeds.is_empty() {
            return Err(WorkbenchError::config("seeds must not be empty"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(WorkbenchError::config("seeds must be distinct"));
        }
        let mut names = BTreeSet::new();
        for v in &self.variants {
            if !names.insert(v.name.as_str()) {
                return Err(WorkbenchError::config(format!("duplicate variant `{}`", v.name)));
            }
            v.validate(&self.train, tasks)?;
        }
        Ok(())
    }

    /// SHA-256 over every field that affects numerics. Seeds are part of
    /// each run's key instead.
    pub fn hash(&self) -> String {
        let mut bench = self.bench.clone();
        bench.seed = 0;
        let mut train = self.train.clone();
        train.seed = 0;
        let view = Hashed {
            bench: &bench,
            blocks: self.blocks,
            train: &train,
            variants: &self.variants,
        };
        let bytes = serde_json::to_vec(&view).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            input_dim: self.bench.input_dim,
            width: self.bench.trunk_width,
            blocks: self.blocks,
            head_dims: self.bench.tasks.iter().map(|t| t.output_dim).collect(),
        }
    }

    pub fn bench_for(&self, seed: u64) -> SynthBenchConfig {
        SynthBenchConfig {
            seed,
            ..self.bench.clone()
        }
    }

    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn variant(&self, name: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.name == name)
    }
}
