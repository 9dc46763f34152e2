//! Task-specific select-or-skip policies.
//!
//! Each (block, task) pair owns one unconstrained logit `a`; its execution
//! probability is `α = logistic(a)` and its decision distribution is
//! `π = [1 − α, α]` (index 0 = skip, 1 = select). Discrete decisions use the
//! Gumbel-max trick and training uses the Gumbel-softmax relaxation of the
//! same perturbed log-probabilities.
//!
//! Blocks are indexed from 0 (next to the stem) to `L − 1` (next to the
//! heads). Matrices are stored block-major: entry `(l, k)` lives at
//! `l * tasks + k`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{logistic, Graph, Var};
use crate::rng;
use crate::tensor::Tensor;

/// Clamp applied to `π` entries before taking logs.
pub const PI_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyLogits {
    blocks: usize,
    tasks: usize,
    raw: Vec<f64>,
}

impl PolicyLogits {
    /// All logits zero, i.e. α = 0.5 everywhere.
    pub fn zeros(blocks: usize, tasks: usize) -> Result<Self> {
        Self::from_raw(blocks, tasks, vec![0.0; blocks * tasks])
    }

    pub fn from_raw(blocks: usize, tasks: usize, raw: Vec<f64>) -> Result<Self> {
        if blocks == 0 || tasks == 0 {
            return Err(invalid("policy needs at least one block and one task"));
        }
        if raw.len() != blocks * tasks {
            return Err(invalid(format!(
                "{} logits for a {blocks}×{tasks} policy",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy logit".into()));
        }
        Ok(Self { blocks, tasks, raw })
    }

    /// Logits whose execution probabilities are `alpha` (block-major).
    pub fn from_alpha(blocks: usize, tasks: usize, alpha: &[f64]) -> Result<Self> {
        let raw = alpha
            .iter()
            .map(|&a| {
                if a > 0.0 && a < 1.0 {
                    Ok((a / (1.0 - a)).ln())
                } else {
                    Err(invalid(format!("probability {a} outside (0, 1)")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_raw(blocks, tasks, raw)
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Number of trainable policy scalars.
    pub fn parameter_count(&self) -> usize {
        self.raw.len()
    }

    fn check(&self, l: usize, k: usize) -> Result<usize> {
        if l >= self.blocks || k >= self.tasks {
            return Err(Error::OutOfRange(format!(
                "({l}, {k}) in a {}×{} policy",
                self.blocks, self.tasks
            )));
        }
        Ok(l * self.tasks + k)
    }

    pub fn raw_at(&self, l: usize, k: usize) -> Result<f64> {
        Ok(self.raw[self.check(l, k)?])
    }

    /// Probability that block `l` executes for task `k`.
    pub fn execute_probability(&self, l: usize, k: usize) -> Result<f64> {
        Ok(logistic(self.raw_at(l, k)?))
    }

    /// All α values, block-major.
    pub fn alpha(&self) -> Vec<f64> {
        self.raw.iter().map(|&a| logistic(a)).collect()
    }

    /// α values of one task, ordered by block.
    pub fn task_alpha(&self, k: usize) -> Vec<f64> {
        (0..self.blocks)
            .map(|l| logistic(self.raw[l * self.tasks + k]))
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.blocks, self.tasks], self.raw.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (l, k) = t.dims2()?;
        Self::from_raw(l, k, t.data().to_vec())
    }

    /// Gumbel-softmax relaxation over all entries.
    pub fn soft_decision(&self, draw: &GumbelDraw, tau: f64) -> Result<SoftDecision> {
        self.check_draw(draw)?;
        if tau.is_nan() || tau <= 0.0 {
            return Err(invalid(format!("temperature {tau} must be positive")));
        }
        let v = self
            .raw
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let pi = decision_distribution(logistic(a));
                let z0 = (pi[0].ln() + draw.noise[2 * i]) / tau;
                let z1 = (pi[1].ln() + draw.noise[2 * i + 1]) / tau;
                let m = z0.max(z1);
                let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
                [e0 / (e0 + e1), e1 / (e0 + e1)]
            })
            .collect();
        Ok(SoftDecision {
            blocks: self.blocks,
            tasks: self.tasks,
            tau,
            v,
        })
    }

    /// Gumbel-max decisions: `u = argmax_j (log π(j) + G(j))`, ties → select.
    pub fn hard_decision(&self, draw: &GumbelDraw) -> Result<DecisionMatrix> {
        self.check_draw(draw)?;
        let u = self
            .raw
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let pi = decision_distribution(logistic(a));
                pi[1].ln() + draw.noise[2 * i + 1] >= pi[0].ln() + draw.noise[2 * i]
            })
            .collect();
        DecisionMatrix::new(self.blocks, self.tasks, u, Provenance::Sampled)
    }

    /// The most likely decision for every entry (α ≥ 0.5 selects).
    pub fn argmax_decision(&self) -> DecisionMatrix {
        let u = self.raw.iter().map(|&a| a >= 0.0).collect();
        DecisionMatrix::new(self.blocks, self.tasks, u, Provenance::Argmax).unwrap()
    }

    fn check_draw(&self, draw: &GumbelDraw) -> Result<()> {
        if draw.blocks != self.blocks || draw.tasks != self.tasks {
            return Err(invalid(format!(
                "noise for {}×{} applied to a {}×{} policy",
                draw.blocks, draw.tasks, self.blocks, self.tasks
            )));
        }
        Ok(())
    }

    /// CSV with header `block,task,logit,alpha`, one row per entry, block-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block,task,logit,alpha\n");
        for l in 0..self.blocks {
            for k in 0..self.tasks {
                let a = self.raw[l * self.tasks + k];
                writeln!(out, "{l},{k},{a},{}", logistic(a)).unwrap();
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("block,task,logit,alpha") {
            return Err(Error::Parse("policy CSV header".into()));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("policy CSV row {}", n + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            let l: usize = f[0].trim().parse().map_err(|_| bad())?;
            let k: usize = f[1].trim().parse().map_err(|_| bad())?;
            let a: f64 = f[2].trim().parse().map_err(|_| bad())?;
            rows.push((l, k, a));
        }
        let blocks = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let tasks = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != blocks * tasks {
            return Err(Error::Parse("policy CSV does not cover a full matrix".into()));
        }
        let mut raw = vec![f64::NAN; blocks * tasks];
        for (l, k, a) in rows {
            raw[l * tasks + k] = a;
        }
        Self::from_raw(blocks, tasks, raw)
    }
}

/// `π = [1 − α, α]` with both entries clamped to `[PI_CLAMP, 1 − PI_CLAMP]`.
pub fn decision_distribution(alpha: f64) -> [f64; 2] {
    [
        (1.0 - alpha).clamp(PI_CLAMP, 1.0 - PI_CLAMP),
        alpha.clamp(PI_CLAMP, 1.0 - PI_CLAMP),
    ]
}

/// Standard Gumbel noise, two values (skip, select) per policy entry.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelDraw {
    blocks: usize,
    tasks: usize,
    noise: Vec<f64>,
    seed: u64,
}

impl GumbelDraw {
    pub fn draw(blocks: usize, tasks: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "gumbel", 0);
        let noise = (0..blocks * tasks * 2)
            .map(|_| gumbel_from_uniform(rng.sample(Open01)))
            .collect();
        Self {
            blocks,
            tasks,
            noise,
            seed,
        }
    }

    /// Noise given explicitly as `[G(0), G(1)]` pairs, block-major.
    pub fn from_noise(blocks: usize, tasks: usize, noise: Vec<f64>) -> Result<Self> {
        if noise.len() != blocks * tasks * 2 {
            return Err(invalid(format!(
                "{} noise values for a {blocks}×{tasks} policy",
                noise.len()
            )));
        }
        if noise.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gumbel noise".into()));
        }
        Ok(Self {
            blocks,
            tasks,
            noise,
            seed: 0,
        })
    }

    pub fn zeros(blocks: usize, tasks: usize) -> Self {
        Self::from_noise(blocks, tasks, vec![0.0; blocks * tasks * 2]).unwrap()
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// `G = −log(−log U)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Relaxed decisions `v(l, k) = [v(0), v(1)]` at temperature `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftDecision {
    blocks: usize,
    tasks: usize,
    tau: f64,
    v: Vec<[f64; 2]>,
}

impl SoftDecision {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn get(&self, l: usize, k: usize) -> [f64; 2] {
        self.v[l * self.tasks + k]
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    /// Select weights `v(1)` of task `k`, ordered by block.
    pub fn select_weights(&self, k: usize) -> Vec<f64> {
        (0..self.blocks).map(|l| self.get(l, k)[1]).collect()
    }

    /// Soft decisions equal to a binary matrix.
    pub fn from_decisions(u: &DecisionMatrix) -> Self {
        let v = u
            .u
            .iter()
            .map(|&s| if s { [0.0, 1.0] } else { [1.0, 0.0] })
            .collect();
        Self {
            blocks: u.blocks,
            tasks: u.tasks,
            tau: 1.0,
            v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sampled,
    Argmax,
    Manual,
    RandomBaseline,
}

/// Binary select (`true`) / skip (`false`) assignment per (block, task).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionMatrix {
    blocks: usize,
    tasks: usize,
    #[serde(with = "bits")]
    u: Vec<bool>,
    provenance: Provenance,
}

mod bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(u: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(u.iter().map(|&b| b as u8))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!("decision {other} is not binary"))),
            })
            .collect()
    }
}

impl DecisionMatrix {
    pub fn new(blocks: usize, tasks: usize, u: Vec<bool>, provenance: Provenance) -> Result<Self> {
        if blocks == 0 || tasks == 0 || u.len() != blocks * tasks {
            return Err(invalid(format!(
                "{} decisions for a {blocks}×{tasks} matrix",
                u.len()
            )));
        }
        Ok(Self {
            blocks,
            tasks,
            u,
            provenance,
        })
    }

    /// Builds from rows of `0`/`1`, one row per block.
    pub fn from_rows(rows: &[&[u8]], provenance: Provenance) -> Result<Self> {
        let tasks = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != tasks) {
            return Err(invalid("ragged decision rows"));
        }
        let mut u = Vec::with_capacity(rows.len() * tasks);
        for row in rows {
            for &b in *row {
                match b {
                    0 => u.push(false),
                    1 => u.push(true),
                    other => return Err(invalid(format!("decision {other} is not binary"))),
                }
            }
        }
        Self::new(rows.len(), tasks, u, provenance)
    }

    pub fn all_select(blocks: usize, tasks: usize) -> Self {
        Self::new(blocks, tasks, vec![true; blocks * tasks], Provenance::Manual).unwrap()
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn get(&self, l: usize, k: usize) -> bool {
        self.u[l * self.tasks + k]
    }

    pub fn entries(&self) -> &[bool] {
        &self.u
    }

    /// Blocks selected by task `k`.
    pub fn selected_blocks(&self, k: usize) -> Vec<usize> {
        (0..self.blocks).filter(|&l| self.get(l, k)).collect()
    }

    /// Whether any task executes block `l`.
    pub fn block_used(&self, l: usize) -> bool {
        (0..self.tasks).any(|k| self.get(l, k))
    }

    /// Number of selected blocks per task.
    pub fn column_sums(&self) -> Vec<usize> {
        (0..self.tasks)
            .map(|k| self.selected_blocks(k).len())
            .collect()
    }

    pub fn skip_count(&self) -> usize {
        self.u.iter().filter(|s| !**s).count()
    }

    /// Rows of `0`/`1` characters, one per block.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in 0..self.blocks {
            for k in 0..self.tasks {
                s.push(if self.get(l, k) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }
}

/// Linear temperature annealing from `tau_start` to `tau_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub tau_start: f64,
    pub tau_min: f64,
    pub total_steps: u64,
}

impl AnnealSchedule {
    pub const DEFAULT_TAU_START: f64 = 5.0;
    pub const DEFAULT_TAU_MIN: f64 = 0.5;

    pub fn new(tau_start: f64, tau_min: f64, total_steps: u64) -> Result<Self> {
        if !(tau_min > 0.0 && tau_start >= tau_min && tau_start.is_finite()) {
            return Err(invalid(format!(
                "temperatures must satisfy tau_start ({tau_start}) >= tau_min ({tau_min}) > 0"
            )));
        }
        if total_steps == 0 {
            return Err(invalid("annealing needs at least one step"));
        }
        Ok(Self {
            tau_start,
            tau_min,
            total_steps,
        })
    }

    pub fn temperature(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::OutOfRange(format!(
                "step {t} beyond schedule of {}",
                self.total_steps
            )));
        }
        let frac = t as f64 / self.total_steps as f64;
        Ok(self.tau_start + (self.tau_min - self.tau_start) * frac)
    }
}

/// Which policy entries are trainable at a given curriculum epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurriculumState {
    pub epoch: u64,
    pub open_blocks: BTreeSet<usize>,
}

impl CurriculumState {
    pub fn is_open(&self, l: usize) -> bool {
        self.open_blocks.contains(&l)
    }

    /// Every block open regardless of epoch.
    pub fn all_open(epoch: u64, blocks: usize) -> Self {
        Self {
            epoch,
            open_blocks: (0..blocks).collect(),
        }
    }

    /// Per-block open flags.
    pub fn mask(&self, blocks: usize) -> Vec<bool> {
        (0..blocks).map(|l| self.is_open(l)).collect()
    }
}

/// Opens the last `min(epoch, L)` blocks; epoch 0 (warm-up) opens none.
pub fn curriculum_mask(epoch: u64, blocks: usize) -> CurriculumState {
    let open = (epoch.min(blocks as u64)) as usize;
    CurriculumState {
        epoch,
        open_blocks: (blocks - open..blocks).collect(),
    }
}

/// `n` independent Gumbel-max samples using seeds `seed + i`.
pub fn sample_policies(logits: &PolicyLogits, n: usize, seed: u64) -> Result<Vec<DecisionMatrix>> {
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    (0..n as u64)
        .map(|i| {
            let draw = GumbelDraw::draw(logits.blocks, logits.tasks, seed.wrapping_add(i));
            logits.hard_decision(&draw)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomPolicyMode {
    /// Same total number of skips as the reference, anywhere in the matrix.
    MatchTotal,
    /// Same number of skips per task as the reference.
    MatchPerTask,
}

/// Random decisions preserving the reference's skip counts.
pub fn random_policy(
    mode: RandomPolicyMode,
    reference: &DecisionMatrix,
    seed: u64,
) -> DecisionMatrix {
    let (blocks, tasks) = (reference.blocks, reference.tasks);
    let mut rng = rng::stream(seed, "random-policy", 0);
    let mut u = vec![true; blocks * tasks];
    match mode {
        RandomPolicyMode::MatchTotal => {
            let mut slots: Vec<usize> = (0..blocks * tasks).collect();
            slots.shuffle(&mut rng);
            for &i in &slots[..reference.skip_count()] {
                u[i] = false;
            }
        }
        RandomPolicyMode::MatchPerTask => {
            for k in 0..tasks {
                let skips = blocks - reference.selected_blocks(k).len();
                let mut rows: Vec<usize> = (0..blocks).collect();
                rows.shuffle(&mut rng);
                for &l in &rows[..skips] {
                    u[l * tasks + k] = false;
                }
            }
        }
    }
    DecisionMatrix::new(blocks, tasks, u, Provenance::RandomBaseline).unwrap()
}

/// Graph nodes produced by [`relaxed_gates`].
pub struct RelaxedGates {
    /// α for every entry, `[L, K]`, with gradient flowing only into open blocks.
    pub alpha: Var,
    /// `gates[l][k]`: the select weight `v(1)` node, or `None` for a closed
    /// block (executed deterministically).
    pub gates: Vec<Vec<Option<Var>>>,
}

/// Records the Gumbel-softmax relaxation of `logits` (a `[L, K]` parameter
/// node) in `graph`.
pub fn relaxed_gates(
    graph: &mut Graph,
    logits: Var,
    draw: &GumbelDraw,
    tau: f64,
    curriculum: &CurriculumState,
) -> Result<RelaxedGates> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(invalid(format!("temperature {tau} must be positive")));
    }
    let (blocks, tasks) = (draw.blocks, draw.tasks);
    let n = blocks * tasks;
    let mask: Vec<bool> = (0..n).map(|i| curriculum.is_open(i / tasks)).collect();
    let open = graph.grad_mask(logits, mask);
    let alpha = graph.sigmoid(open);
    let select = graph.reshape(alpha, vec![n, 1]);
    let neg = graph.scale(select, -1.0);
    let skip = graph.add_scalar(neg, 1.0);
    let pi = graph.concat(&[skip, select]);
    let pi = graph.clamp(pi, PI_CLAMP, 1.0 - PI_CLAMP);
    let log_pi = graph.log(pi);
    let noise = graph.constant(Tensor::from_parts(vec![n, 2], draw.noise.clone()));
    let perturbed = graph.add(log_pi, noise);
    let scaled = graph.scale(perturbed, 1.0 / tau);
    let v = graph.softmax(scaled);
    let v_select = graph.column(v, 1);
    let gates = (0..blocks)
        .map(|l| {
            (0..tasks)
                .map(|k| {
                    curriculum
                        .is_open(l)
                        .then(|| graph.element(v_select, l * tasks + k))
                })
                .collect()
        })
        .collect();
    Ok(RelaxedGates { alpha, gates })
}
