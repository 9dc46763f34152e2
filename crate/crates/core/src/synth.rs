//! Synthetic multi-task benchmark with planted sharing structure.
//!
//! Each task family owns a fixed random generator `g_f(x)` made of two
//! rectified affine layers. A task's clean scores are
//! `z = (B_f + s·T_k)·g_f(x)` for a family map `B_f` and a task map `T_k`,
//! standardized per output with statistics from a fixed calibration sample.
//! Tasks of one family therefore depend on the same features, while tasks of
//! different families are unrelated.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{LossKind, MultiTaskDataset, Targets, TaskSpec};
use crate::error::{invalid, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    SharedTrunk,
    IndependentTrunk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Classification,
    Regression,
    CosineTarget,
}

impl SynthKind {
    pub fn loss_kind(self) -> LossKind {
        match self {
            SynthKind::Classification => LossKind::CrossEntropy,
            SynthKind::Regression => LossKind::L1,
            SynthKind::CosineTarget => LossKind::Cosine,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub name: String,
    pub family: TaskFamily,
    pub kind: SynthKind,
    /// Classes for classification, target width otherwise.
    pub output_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthBenchConfig {
    pub input_dim: usize,
    pub trunk_width: usize,
    /// Width of both generator layers.
    pub generator_width: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub noise_std: f64,
    /// Weight `s` of the task-specific map relative to the family map.
    pub task_specificity: f64,
    pub tasks: Vec<SynthTask>,
    pub seed: u64,
}

const CALIBRATION_ROWS: usize = 4096;

impl SynthBenchConfig {
    /// Tasks A and B share a generator; C has its own.
    pub fn preset_default() -> Self {
        let task = |name: &str, family, kind, output_dim| SynthTask {
            name: name.to_string(),
            family,
            kind,
            output_dim,
        };
        Self {
            input_dim: 32,
            trunk_width: 64,
            generator_width: 8,
            n_train: 4000,
            n_val: 1000,
            n_test: 1000,
            noise_std: 0.1,
            task_specificity: 0.3,
            tasks: vec![
                task("A", TaskFamily::SharedTrunk, SynthKind::Regression, 4),
                task("B", TaskFamily::SharedTrunk, SynthKind::Regression, 4),
                task("C", TaskFamily::IndependentTrunk, SynthKind::Regression, 4),
            ],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.trunk_width == 0 || self.generator_width == 0 {
            return Err(invalid("benchmark widths must be positive"));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(invalid("every split needs at least one example"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid(format!("noise_std {} must be non-negative", self.noise_std)));
        }
        if !(self.task_specificity >= 0.0 && self.task_specificity.is_finite()) {
            return Err(invalid("task_specificity must be non-negative"));
        }
        if self.tasks.len() < 2 {
            return Err(invalid("a benchmark needs at least two tasks"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(invalid(format!("duplicate task name `{}`", t.name)));
            }
            self.task_spec(t)?;
        }
        Ok(())
    }

    fn task_spec(&self, t: &SynthTask) -> Result<TaskSpec> {
        TaskSpec::new(&t.name, t.kind.loss_kind(), t.output_dim)
    }

    pub fn task_specs(&self) -> Result<Vec<TaskSpec>> {
        self.tasks.iter().map(|t| self.task_spec(t)).collect()
    }
}

/// Generated splits plus the task descriptions.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub tasks: Vec<TaskSpec>,
    pub train: MultiTaskDataset,
    pub val: MultiTaskDataset,
    pub test: MultiTaskDataset,
}

struct Layer {
    weight: Vec<f64>,
    bias: Vec<f64>,
    fan_in: usize,
    fan_out: usize,
}

impl Layer {
    fn draw(rng: &mut impl Rng, fan_in: usize, fan_out: usize, std: f64, bias_std: f64) -> Self {
        let weight = (0..fan_in * fan_out)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let bias = (0..fan_out)
            .map(|_| bias_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// `out[j] = b[j] + Σ_i W[j, i]·x[i]`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.fan_out)
            .map(|j| {
                let row = &self.weight[j * self.fan_in..(j + 1) * self.fan_in];
                self.bias[j] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }
}

struct TaskMap {
    family: usize,
    map: Layer,
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// The fixed random maps behind a benchmark.
pub struct SynthGenerator {
    config: SynthBenchConfig,
    families: Vec<[Layer; 2]>,
    tasks: Vec<TaskMap>,
}

fn family_index(f: TaskFamily) -> usize {
    match f {
        TaskFamily::SharedTrunk => 0,
        TaskFamily::IndependentTrunk => 1,
    }
}

impl SynthGenerator {
    pub fn new(config: &SynthBenchConfig) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.input_dim, config.generator_width);
        let families = (0..2u64)
            .map(|f| {
                let mut r = rng::stream(config.seed, "synth.generator", f);
                let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
                [Layer::draw(&mut r, d, h, he(d), 0.1), Layer::draw(&mut r, h, h, he(h), 0.1)]
            })
            .collect();
        let max_out = config.tasks.iter().map(|t| t.output_dim).max().unwrap_or(0);
        let base: Vec<Layer> = (0..2u64)
            .map(|f| Layer::draw(&mut rng::stream(config.seed, "synth.family-map", f), h, max_out, 1.0, 0.0))
            .collect();
        let tasks = config
            .tasks
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let family = family_index(t.family);
                let own = Layer::draw(&mut rng::stream(config.seed, "synth.task-map", k as u64), h, t.output_dim, 1.0, 0.0);
                let weight = (0..t.output_dim * h)
                    .map(|i| base[family].weight[i] + config.task_specificity * own.weight[i])
                    .collect();
                TaskMap {
                    family,
                    map: Layer {
                        weight,
                        bias: vec![0.0; t.output_dim],
                        fan_in: h,
                        fan_out: t.output_dim,
                    },
                    mean: vec![0.0; t.output_dim],
                    std: vec![1.0; t.output_dim],
                }
            })
            .collect();
        let mut gen = Self {
            config: config.clone(),
            families,
            tasks,
        };
        gen.calibrate();
        Ok(gen)
    }

    fn calibrate(&mut self) {
        let mut r = rng::stream(self.config.seed, "synth.calibration", 0);
        let rows: Vec<Vec<f64>> = (0..CALIBRATION_ROWS)
            .map(|_| standard_normal_row(&mut r, self.config.input_dim))
            .collect();
        for k in 0..self.tasks.len() {
            let dim = self.tasks[k].map.fan_out;
            let mut sum = vec![0.0; dim];
            let mut sq = vec![0.0; dim];
            for x in &rows {
                let z = self.raw_scores(k, x);
                for j in 0..dim {
                    sum[j] += z[j];
                    sq[j] += z[j] * z[j];
                }
            }
            let n = CALIBRATION_ROWS as f64;
            let t = &mut self.tasks[k];
            for j in 0..dim {
                t.mean[j] = sum[j] / n;
                let var = sq[j] / n - t.mean[j] * t.mean[j];
                t.std[j] = if var > 1e-12 { var.sqrt() } else { 1.0 };
            }
        }
    }

    /// Features `g_f(x)` of the family that task `k` belongs to.
    pub fn features(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let [l1, l2] = &self.families[self.tasks[k].family];
        let h: Vec<f64> = l1.apply(x).into_iter().map(|v| v.max(0.0)).collect();
        l2.apply(&h).into_iter().map(|v| v.max(0.0)).collect()
    }

    fn raw_scores(&self, k: usize, x: &[f64]) -> Vec<f64> {
        self.tasks[k].map.apply(&self.features(k, x))
    }

    /// Standardized noise-free scores of task `k` at `x`.
    pub fn clean_scores(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let t = &self.tasks[k];
        self.raw_scores(k, x)
            .iter()
            .zip(t.mean.iter().zip(&t.std))
            .map(|(z, (m, s))| (z - m) / s)
            .collect()
    }

    /// Draws the train, validation and test splits.
    pub fn generate(&self) -> Result<SynthData> {
        let c = &self.config;
        let n = c.n_train + c.n_val + c.n_test;
        let mut xr = rng::stream(c.seed, "synth.inputs", 0);
        let inputs: Vec<f64> = (0..n).flat_map(|_| standard_normal_row(&mut xr, c.input_dim)).collect();
        let mut targets = Vec::with_capacity(c.tasks.len());
        for (k, task) in c.tasks.iter().enumerate() {
            let mut nr = rng::stream(c.seed, "synth.noise", k as u64);
            let dim = task.output_dim;
            let mut labels = Vec::new();
            let mut dense = Vec::new();
            for i in 0..n {
                let x = &inputs[i * c.input_dim..(i + 1) * c.input_dim];
                let mut z = self.clean_scores(k, x);
                if c.noise_std > 0.0 {
                    for v in &mut z {
                        *v += c.noise_std * nr.sample::<f64, _>(StandardNormal);
                    }
                }
                match task.kind {
                    SynthKind::Regression => dense.extend(z),
                    SynthKind::Classification => labels.push(
                        z.iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                            .0,
                    ),
                    SynthKind::CosineTarget => {
                        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            return Err(invalid(format!("zero target vector for task `{}`", task.name)));
                        }
                        dense.extend(z.iter().map(|v| v / norm));
                    }
                }
            }
            targets.push(match task.kind {
                SynthKind::Classification => Targets::Classes { labels, classes: dim },
                _ => Targets::Dense(Tensor::matrix(n, dim, dense)?),
            });
        }
        let all = MultiTaskDataset::new(Tensor::matrix(n, c.input_dim, inputs)?, targets)?;
        let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
        Ok(SynthData {
            tasks: c.task_specs()?,
            train: all.subset(&range(0, c.n_train))?,
            val: all.subset(&range(c.n_train, c.n_train + c.n_val))?,
            test: all.subset(&range(c.n_train + c.n_val, n))?,
        })
    }
}

fn standard_normal_row(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

/// Builds the generator and draws the splits.
pub fn generate_synthetic(config: &SynthBenchConfig) -> Result<SynthData> {
    SynthGenerator::new(config)?.generate()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthBenchConfig {
        SynthBenchConfig {
            n_train: 200,
            n_val: 50,
            n_test: 50,
            ..SynthBenchConfig::preset_default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthBenchConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train.inputs, c.train.inputs);
    }

    #[test]
    fn noiseless_regression_is_a_function_of_x() {
        let cfg = SynthBenchConfig {
            noise_std: 0.0,
            ..small()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let gen = SynthGenerator::new(&cfg).unwrap();
        let Targets::Dense(t) = &data.val.targets[0] else { panic!() };
        for r in 0..data.val.len() {
            assert_eq!(t.row(r), gen.clean_scores(0, data.val.inputs.row(r)).as_slice());
        }
    }

    #[test]
    fn shapes_and_kinds() {
        let mut cfg = small();
        cfg.tasks[1].kind = SynthKind::Classification;
        let data = generate_synthetic(&cfg).unwrap();
        assert_eq!(data.train.len(), 200);
        assert_eq!((data.val.len(), data.test.len()), (50, 50));
        assert_eq!(data.train.input_dim(), 32);
        for (t, spec) in data.train.targets.iter().zip(&data.tasks) {
            t.check_against(spec).unwrap();
        }
        let Targets::Classes { labels, .. } = &data.train.targets[1] else { panic!() };
        let mut seen = [false; 4];
        labels.iter().for_each(|&c| seen[c] = true);
        assert!(seen.iter().filter(|s| **s).count() >= 3);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.tasks.truncate(1);
        assert!(c.validate().is_err());
        let mut c = small();
        c.tasks[1].name = "A".into();
        assert!(c.validate().is_err());
        assert!(SynthBenchConfig { noise_std: -1.0, ..small() }.validate().is_err());
        assert!(SynthBenchConfig { n_val: 0, ..small() }.validate().is_err());
    }
}
