//! Two-phase pipeline: policy learning (warm-up, then alternating weight and
//! policy steps on disjoint splits) followed by sampling discrete
//! architectures and retraining each from scratch.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MultiTaskDataset, TaskSpec};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{metric_suite, Metric, MetricsReport};
use crate::graph::{Graph, Inputs, Var};
use crate::network::{subnetwork_for, Gate, MultiTaskNetwork, NetworkConfig};
use crate::objectives::{task_loss, total_loss, LossWeights};
use crate::optim::{Adam, Sgd};
use crate::policy::{
    curriculum_mask, random_policy, relaxed_gates, sample_policies, AnnealSchedule, CurriculumState,
    DecisionMatrix, GumbelDraw, PolicyLogits, RandomPolicyMode,
};
use crate::rng::{derive_seed, stream};
use crate::tensor::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toggles {
    pub curriculum: bool,
    pub sparsity: bool,
    pub sharing: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            curriculum: true,
            sparsity: true,
            sharing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Warm-up plus policy-phase iterations.
    pub total_policy_iters: u64,
    pub retrain_iters: u64,
    pub warmup_fraction: f64,
    pub weight_lr: f64,
    pub policy_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub anneal: AnnealSchedule,
    pub weights: LossWeights,
    pub sample_count: usize,
    pub seed: u64,
    pub toggles: Toggles,
    /// Validation interval for checkpoint selection during retraining.
    pub eval_every: u64,
}

impl TrainConfig {
    /// Defaults for `tasks` equally weighted tasks. The anneal schedule
    /// spans the policy phase.
    pub fn with_defaults(tasks: usize, total_policy_iters: u64, retrain_iters: u64) -> Result<Self> {
        let mut c = Self {
            total_policy_iters,
            retrain_iters,
            warmup_fraction: 0.2,
            weight_lr: 0.01,
            policy_lr: 0.06,
            momentum: Sgd::DEFAULT_MOMENTUM,
            batch_size: 64,
            anneal: AnnealSchedule::new(AnnealSchedule::DEFAULT_TAU_START, AnnealSchedule::DEFAULT_TAU_MIN, 1)?,
            weights: LossWeights {
                task_weights: vec![1.0; tasks],
                sparsity: 0.001,
                sharing: 0.0,
            },
            sample_count: 8,
            seed: 0,
            toggles: Toggles::default(),
            eval_every: 50,
        };
        c.fit_anneal()?;
        Ok(c)
    }

    /// Defaults with 2000 policy and 2000 retrain iterations.
    pub fn preset_default(tasks: usize) -> Self {
        Self::with_defaults(tasks, 2000, 2000).expect("preset budgets are valid")
    }

    /// Stretches the anneal schedule over the policy phase.
    pub fn fit_anneal(&mut self) -> Result<()> {
        self.anneal = AnnealSchedule::new(self.anneal.tau_start, self.anneal.tau_min, self.policy_iters().max(1))?;
        Ok(())
    }

    pub fn validate(&self, tasks: usize) -> Result<()> {
        if self.total_policy_iters == 0 || self.retrain_iters == 0 {
            return Err(invalid("iteration budgets must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(invalid(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction)));
        }
        if !(self.weight_lr > 0.0 && self.policy_lr > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.sample_count == 0 || self.eval_every == 0 {
            return Err(invalid("batch_size, sample_count and eval_every must be positive"));
        }
        if self.weights.task_weights.len() != tasks {
            return Err(invalid(format!(
                "{} task weights for {tasks} tasks",
                self.weights.task_weights.len()
            )));
        }
        self.weights.validate()?;
        AnnealSchedule::new(self.anneal.tau_start, self.anneal.tau_min, self.anneal.total_steps)?;
        Ok(())
    }

    pub fn warmup_iters(&self) -> u64 {
        (self.warmup_fraction * self.total_policy_iters as f64).round() as u64
    }

    pub fn policy_iters(&self) -> u64 {
        self.total_policy_iters - self.warmup_iters()
    }

    /// Regularizer weights after applying the toggles.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            task_weights: self.weights.task_weights.clone(),
            sparsity: if self.toggles.sparsity { self.weights.sparsity } else { 0.0 },
            sharing: if self.toggles.sharing { self.weights.sharing } else { 0.0 },
        }
    }
}

/// Disjoint index sets for weight and policy updates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPair {
    pub split_w: Vec<usize>,
    pub split_p: Vec<usize>,
}

impl SplitPair {
    /// Random half/half partition of `0..n`.
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("cannot split {n} examples")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream(seed, "split", 0));
        let mut split_p = idx.split_off(n / 2);
        idx.sort_unstable();
        split_p.sort_unstable();
        Ok(Self { split_w: idx, split_p })
    }
}

/// Endless epoch-wise reshuffled batches over a fixed index set.
struct BatchStream {
    indices: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(indices: Vec<usize>, batch: usize, rng: ChaCha8Rng) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("no examples to draw batches from"));
        }
        Ok(Self {
            order: Vec::new(),
            pos: 0,
            indices,
            batch,
            rng,
        })
    }

    fn epoch_len(&self) -> u64 {
        self.indices.len().div_ceil(self.batch) as u64
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order = self.indices.clone();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let rows = self.order[self.pos..end].to_vec();
        self.pos = end;
        rows
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Warmup,
    Weight,
    Policy,
}

/// What an observer sees after every optimizer step.
pub struct StepEvent<'a> {
    pub kind: StepKind,
    /// Index within the phase (warm-up or policy phase), from 0.
    pub iteration: u64,
    /// Curriculum epoch; 0 during warm-up.
    pub epoch: u64,
    pub tau: Option<f64>,
    pub open_blocks: Vec<usize>,
    pub loss: f64,
    /// Logit gradient used by a policy step.
    pub logit_grad: Option<Vec<f64>>,
    pub store: &'a ParamStore,
    pub logits: ParamId,
}

pub type Observer<'o> = dyn FnMut(&StepEvent<'_>) + 'o;

/// Result of the policy phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub logits: PolicyLogits,
    /// Raw logits after every `eval_every` policy iterations and at the end.
    pub trace: Vec<Vec<f64>>,
    pub warmup_iters: u64,
    pub policy_iters: u64,
    pub final_epoch: u64,
    pub final_tau: f64,
    pub epoch_len: u64,
}

/// Phase 1 state: the supernetwork, its logits and both optimizers.
pub struct PolicyLearner<'a> {
    config: &'a TrainConfig,
    tasks: &'a [TaskSpec],
    train: &'a MultiTaskDataset,
    pub store: ParamStore,
    pub net: MultiTaskNetwork,
    logits: ParamId,
    splits: SplitPair,
    w_batches: BatchStream,
    p_batches: BatchStream,
    sgd: Sgd,
    adam: Adam,
    warmed_up: bool,
}

fn check_setup(net_config: &NetworkConfig, tasks: &[TaskSpec], data: &MultiTaskDataset) -> Result<()> {
    net_config.validate()?;
    if tasks.len() != net_config.tasks() || data.task_count() != tasks.len() {
        return Err(invalid("network heads, task specs and dataset targets disagree"));
    }
    if data.is_empty() {
        return Err(invalid("empty dataset"));
    }
    if data.input_dim() != net_config.input_dim {
        return Err(invalid(format!(
            "dataset has {} input features, network expects {}",
            data.input_dim(),
            net_config.input_dim
        )));
    }
    for ((t, spec), &d) in data.targets.iter().zip(tasks).zip(&net_config.head_dims) {
        t.check_against(spec)?;
        if d != spec.output_dim {
            return Err(invalid(format!("head width {d} for task `{}`", spec.name)));
        }
    }
    Ok(())
}

fn batch_inputs(data: &MultiTaskDataset, rows: &[usize]) -> Result<(Inputs, MultiTaskDataset)> {
    let batch = data.subset(rows)?;
    let mut inputs = Inputs::new();
    inputs.insert("x".into(), batch.inputs.clone());
    Ok((inputs, batch))
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("{what} loss is {loss}")))
    }
}

/// Records task losses for `outputs` and their weighted total.
fn record_losses(
    g: &mut Graph,
    tasks: &[TaskSpec],
    outputs: &[Var],
    batch: &MultiTaskDataset,
    alpha: Option<(Var, usize, usize)>,
    weights: &LossWeights,
) -> Result<Var> {
    let losses = tasks
        .iter()
        .zip(outputs)
        .zip(&batch.targets)
        .map(|((t, y), target)| task_loss(g, t.loss_kind, *y, target))
        .collect::<Result<Vec<_>>>()?;
    total_loss(g, &losses, alpha, weights)
}

impl<'a> PolicyLearner<'a> {
    /// Fresh supernetwork and zero logits for `config.seed`.
    pub fn new(
        net_config: NetworkConfig,
        tasks: &'a [TaskSpec],
        config: &'a TrainConfig,
        train: &'a MultiTaskDataset,
    ) -> Result<Self> {
        check_setup(&net_config, tasks, train)?;
        config.validate(tasks.len())?;
        let (blocks, k) = (net_config.blocks, net_config.tasks());
        let mut store = ParamStore::new();
        let net = MultiTaskNetwork::new(&mut store, net_config, derive_seed(config.seed, "init", 0))?;
        let logits = store.add("policy.logits", PolicyLogits::zeros(blocks, k)?.to_tensor())?;
        let splits = SplitPair::new(train.len(), config.seed)?;
        let w_batches = BatchStream::new(splits.split_w.clone(), config.batch_size, stream(config.seed, "batches.w", 0))?;
        let p_batches = BatchStream::new(splits.split_p.clone(), config.batch_size, stream(config.seed, "batches.p", 0))?;
        Ok(Self {
            config,
            tasks,
            train,
            store,
            net,
            logits,
            splits,
            w_batches,
            p_batches,
            sgd: Sgd::new(config.weight_lr, config.momentum)?,
            adam: Adam::new(config.policy_lr)?,
            warmed_up: false,
        })
    }

    pub fn splits(&self) -> &SplitPair {
        &self.splits
    }

    pub fn logits_id(&self) -> ParamId {
        self.logits
    }

    pub fn logits(&self) -> PolicyLogits {
        PolicyLogits::from_tensor(self.store.get(self.logits)).expect("logits parameter keeps its shape")
    }

    fn select_weights_only(&mut self) {
        let ids = self.net.param_ids();
        self.store.set_requires_grad(&ids, true);
        self.store.set_requires_grad(&[self.logits], false);
    }

    fn select_logits_only(&mut self) {
        let ids = self.net.param_ids();
        self.store.set_requires_grad(&ids, false);
        self.store.set_requires_grad(&[self.logits], true);
    }

    /// Trains the weights with every block executed for every task. Returns
    /// the loss of each iteration.
    pub fn warmup(&mut self, observer: &mut Observer<'_>) -> Result<Vec<f64>> {
        let iters = self.config.warmup_iters();
        let weights = self.config.effective_weights();
        let all = DecisionMatrix::all_select(self.net.block_count(), self.net.task_count());
        let mut losses = Vec::with_capacity(iters as usize);
        self.select_weights_only();
        for it in 0..iters {
            let rows = self.w_batches.next_batch();
            let (inputs, batch) = batch_inputs(self.train, &rows)?;
            let mut g = Graph::new();
            let x = g.input("x");
            let bound = self.net.bind(&mut g);
            let ys = bound.forward_tasks_hard(&mut g, x, &all)?;
            let total = record_losses(&mut g, self.tasks, &ys, &batch, None, &weights)?;
            g.forward(&self.store, &inputs)?;
            let loss = finite(g.value(total)?.item()?, "warm-up")?;
            g.backward(total, &mut self.store)?;
            self.sgd.step(&mut self.store, &self.net.param_ids())?;
            losses.push(loss);
            observer(&StepEvent {
                kind: StepKind::Warmup,
                iteration: it,
                epoch: 0,
                tau: None,
                open_blocks: Vec::new(),
                loss,
                logit_grad: None,
                store: &self.store,
                logits: self.logits,
            });
        }
        self.warmed_up = true;
        Ok(losses)
    }

    /// One relaxed forward pass over `rows` with its total loss evaluated.
    fn relaxed_loss(
        &self,
        rows: &[usize],
        draw: &GumbelDraw,
        tau: f64,
        curriculum: &CurriculumState,
    ) -> Result<(Graph, Var)> {
        let (blocks, tasks) = (self.net.block_count(), self.net.task_count());
        let (inputs, batch) = batch_inputs(self.train, rows)?;
        let mut g = Graph::new();
        let x = g.input("x");
        let bound = self.net.bind(&mut g);
        let lv = g.param(self.logits);
        let relaxed = relaxed_gates(&mut g, lv, draw, tau, curriculum)?;
        let gates: Vec<Vec<Gate>> = (0..tasks)
            .map(|k| {
                (0..blocks)
                    .map(|l| relaxed.gates[l][k].map_or(Gate::Execute, Gate::Soft))
                    .collect()
            })
            .collect();
        let ys = bound.forward_tasks(&mut g, x, &gates)?;
        let total = record_losses(
            &mut g,
            self.tasks,
            &ys,
            &batch,
            Some((relaxed.alpha, blocks, tasks)),
            &self.config.effective_weights(),
        )?;
        g.forward(&self.store, &inputs)?;
        Ok((g, total))
    }

    /// Alternates one weight step on a `split_w` batch with one policy step
    /// on a `split_p` batch, each with fresh Gumbel noise, the scheduled
    /// temperature and the current curriculum mask.
    pub fn policy_phase(&mut self, observer: &mut Observer<'_>) -> Result<PolicyOutcome> {
        if !self.warmed_up {
            return Err(invalid("policy phase requires a completed warm-up"));
        }
        let c = self.config;
        let (blocks, tasks) = (self.net.block_count(), self.net.task_count());
        let epoch_len = self.p_batches.epoch_len();
        let iters = c.policy_iters();
        let mut trace = Vec::new();
        let (mut epoch, mut tau) = (0, c.anneal.tau_start);
        for t in 0..iters {
            epoch = 1 + t / epoch_len;
            tau = c.anneal.temperature(t)?;
            let curriculum = if c.toggles.curriculum {
                curriculum_mask(epoch, blocks)
            } else {
                CurriculumState::all_open(epoch, blocks)
            };
            let open: Vec<usize> = curriculum.open_blocks.iter().copied().collect();

            self.select_weights_only();
            let rows = self.w_batches.next_batch();
            let draw = GumbelDraw::draw(blocks, tasks, derive_seed(c.seed, "gumbel.weight", t));
            let (g, total) = self.relaxed_loss(&rows, &draw, tau, &curriculum)?;
            let loss = finite(g.value(total)?.item()?, "weight step")?;
            g.backward(total, &mut self.store)?;
            self.sgd.step(&mut self.store, &self.net.param_ids())?;
            observer(&StepEvent {
                kind: StepKind::Weight,
                iteration: t,
                epoch,
                tau: Some(tau),
                open_blocks: open.clone(),
                loss,
                logit_grad: None,
                store: &self.store,
                logits: self.logits,
            });

            self.select_logits_only();
            let rows = self.p_batches.next_batch();
            let draw = GumbelDraw::draw(blocks, tasks, derive_seed(c.seed, "gumbel.policy", t));
            let (g, total) = self.relaxed_loss(&rows, &draw, tau, &curriculum)?;
            let loss = finite(g.value(total)?.item()?, "policy step")?;
            g.backward(total, &mut self.store)?;
            let grad = self
                .store
                .get(self.logits)
                .grad()
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::MissingGrad("policy.logits".into()))?;
            self.adam.step(&mut self.store, &[self.logits])?;
            observer(&StepEvent {
                kind: StepKind::Policy,
                iteration: t,
                epoch,
                tau: Some(tau),
                open_blocks: open,
                loss,
                logit_grad: Some(grad),
                store: &self.store,
                logits: self.logits,
            });
            if (t + 1) % c.eval_every == 0 || t + 1 == iters {
                trace.push(self.store.get(self.logits).data().to_vec());
            }
        }
        self.store.set_requires_grad(&self.net.param_ids(), false);
        self.store.set_requires_grad(&[self.logits], false);
        Ok(PolicyOutcome {
            logits: self.logits(),
            trace,
            warmup_iters: c.warmup_iters(),
            policy_iters: iters,
            final_epoch: epoch,
            final_tau: tau,
            epoch_len,
        })
    }
}

/// Warm-up followed by the policy phase.
pub fn learn_policy<'a>(
    net_config: NetworkConfig,
    tasks: &'a [TaskSpec],
    config: &'a TrainConfig,
    train: &'a MultiTaskDataset,
    observer: &mut Observer<'_>,
) -> Result<(PolicyLearner<'a>, PolicyOutcome)> {
    let mut learner = PolicyLearner::new(net_config, tasks, config, train)?;
    learner.warmup(observer)?;
    let outcome = learner.policy_phase(observer)?;
    Ok((learner, outcome))
}

/// Per-task metrics and the weighted task loss of `net` under `u` on `data`.
pub fn evaluate(
    net: &MultiTaskNetwork,
    store: &ParamStore,
    u: &DecisionMatrix,
    tasks: &[TaskSpec],
    weights: &[f64],
    data: &MultiTaskDataset,
) -> Result<(Vec<Vec<Metric>>, f64)> {
    let mut g = Graph::new();
    let x = g.input("x");
    let bound = net.bind(&mut g);
    let ys = bound.forward_tasks_hard(&mut g, x, u)?;
    let loss_weights = LossWeights {
        task_weights: weights.to_vec(),
        sparsity: 0.0,
        sharing: 0.0,
    };
    let total = record_losses(&mut g, tasks, &ys, data, None, &loss_weights)?;
    let mut inputs = Inputs::new();
    inputs.insert("x".into(), data.inputs.clone());
    g.forward(store, &inputs)?;
    let metrics = tasks
        .iter()
        .zip(&ys)
        .zip(&data.targets)
        .map(|((t, y), target)| metric_suite(t.loss_kind, g.value(*y)?, target))
        .collect::<Result<Vec<_>>>()?;
    Ok((metrics, g.value(total)?.item()?))
}

/// A network retrained from scratch under fixed decisions.
#[derive(Clone, Debug)]
pub struct Retrained {
    pub store: ParamStore,
    pub net: MultiTaskNetwork,
    pub decisions: DecisionMatrix,
    pub val_metrics: Vec<Vec<Metric>>,
    pub val_loss: f64,
    /// Iteration of the kept checkpoint.
    pub best_iteration: u64,
}

impl Retrained {
    pub fn params(&self) -> u64 {
        self.store.numel(&self.net.param_ids()) as u64
    }

    /// Per-example multiply-accumulates summed over all task paths.
    pub fn flops(&self) -> Result<u64> {
        (0..self.net.task_count())
            .map(|k| self.net.count_flops(&self.decisions, k))
            .sum()
    }
}

/// Trains a freshly initialized network under `u` on the full training set
/// for `config.retrain_iters` SGD steps, keeping the checkpoint with the
/// lowest weighted validation loss (checked every `eval_every` steps).
pub fn retrain(
    net_config: &NetworkConfig,
    tasks: &[TaskSpec],
    u: &DecisionMatrix,
    config: &TrainConfig,
    train: &MultiTaskDataset,
    val: &MultiTaskDataset,
    seed: u64,
) -> Result<Retrained> {
    check_setup(net_config, tasks, train)?;
    check_setup(net_config, tasks, val)?;
    config.validate(tasks.len())?;
    let (mut store, net) = subnetwork_for(net_config, u, derive_seed(seed, "init", 0))?;
    let ids = net.param_ids();
    store.set_requires_grad(&ids, true);
    let weights = LossWeights {
        task_weights: config.weights.task_weights.clone(),
        sparsity: 0.0,
        sharing: 0.0,
    };
    let mut sgd = Sgd::new(config.weight_lr, config.momentum)?;
    let mut batches = BatchStream::new((0..train.len()).collect(), config.batch_size, stream(seed, "batches.retrain", 0))?;
    let mut best: Option<(f64, u64, ParamStore)> = None;
    for it in 1..=config.retrain_iters {
        let rows = batches.next_batch();
        let (inputs, batch) = batch_inputs(train, &rows)?;
        let mut g = Graph::new();
        let x = g.input("x");
        let bound = net.bind(&mut g);
        let ys = bound.forward_tasks_hard(&mut g, x, u)?;
        let total = record_losses(&mut g, tasks, &ys, &batch, None, &weights)?;
        g.forward(&store, &inputs)?;
        finite(g.value(total)?.item()?, "retrain")?;
        g.backward(total, &mut store)?;
        sgd.step(&mut store, &ids)?;
        if it % config.eval_every == 0 || it == config.retrain_iters {
            let (_, loss) = evaluate(&net, &store, u, tasks, &weights.task_weights, val)?;
            if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
                best = Some((loss, it, store.clone()));
            }
        }
    }
    let (val_loss, best_iteration, store) = best.expect("at least one evaluation");
    let (val_metrics, _) = evaluate(&net, &store, u, tasks, &weights.task_weights, val)?;
    Ok(Retrained {
        store,
        net,
        decisions: u.clone(),
        val_metrics,
        val_loss,
        best_iteration,
    })
}

/// Phase 2 outcome.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub learned_logits: PolicyLogits,
    pub sampled_decisions: Vec<DecisionMatrix>,
    pub retrain_results: Vec<MetricsReport>,
    pub best_index: usize,
    pub best: Retrained,
}

/// Seed used for the `i`-th retrain of a run.
pub fn sample_seed(config: &TrainConfig, i: usize) -> u64 {
    derive_seed(config.seed, "retrain", i as u64)
}

/// Draws `sample_count` architectures from `logits`, retrains each from
/// scratch and picks the best by validation Δ_T (ties go to the lowest
/// index). Retrains run on the current rayon pool; results do not depend on
/// its size.
#[allow(clippy::too_many_arguments)]
pub fn sample_and_retrain(
    net_config: &NetworkConfig,
    tasks: &[TaskSpec],
    logits: &PolicyLogits,
    config: &TrainConfig,
    train: &MultiTaskDataset,
    val: &MultiTaskDataset,
    reference: &[Vec<Metric>],
) -> Result<RunArtifacts> {
    let decisions = sample_policies(logits, config.sample_count, derive_seed(config.seed, "samples", 0))?;
    let retrained = decisions
        .par_iter()
        .enumerate()
        .map(|(i, u)| retrain(net_config, tasks, u, config, train, val, sample_seed(config, i)))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = tasks.iter().map(|t| t.name.clone()).collect();
    let reports = retrained
        .iter()
        .enumerate()
        .map(|(i, r)| {
            MetricsReport::from_metrics(
                &format!("sample{i}"),
                &names,
                r.val_metrics.clone(),
                reference,
                Some(r.decisions.clone()),
                r.params(),
                r.flops()?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let best_index = reports
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.delta_overall > reports[b].delta_overall { i } else { b });
    Ok(RunArtifacts {
        learned_logits: logits.clone(),
        sampled_decisions: decisions,
        retrain_results: reports,
        best_index,
        best: retrained.into_iter().nth(best_index).expect("index in range"),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SingleTask,
    HardSharing,
    /// Random decisions with the reference's total skip count.
    Random1,
    /// Random decisions with the reference's per-task skip counts.
    Random2,
}

/// Seed used by a baseline run.
pub fn baseline_seed(config: &TrainConfig, kind: BaselineKind) -> u64 {
    let label = match kind {
        BaselineKind::SingleTask => "baseline.single",
        BaselineKind::HardSharing => "baseline.hard",
        BaselineKind::Random1 => "baseline.random1",
        BaselineKind::Random2 => "baseline.random2",
    };
    derive_seed(config.seed, label, 0)
}

/// Trains a baseline with the retraining budget and reports it against
/// `reference` (single-task metrics). The single-task baseline is its own
/// reference. Random baselines need the decisions of an earlier run.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline(
    kind: BaselineKind,
    net_config: &NetworkConfig,
    tasks: &[TaskSpec],
    config: &TrainConfig,
    train: &MultiTaskDataset,
    val: &MultiTaskDataset,
    reference: Option<&[Vec<Metric>]>,
    random_reference: Option<&DecisionMatrix>,
) -> Result<MetricsReport> {
    let seed = baseline_seed(config, kind);
    let names: Vec<String> = tasks.iter().map(|t| t.name.clone()).collect();
    let name = match kind {
        BaselineKind::SingleTask => "single_task",
        BaselineKind::HardSharing => "hard_sharing",
        BaselineKind::Random1 => "random1",
        BaselineKind::Random2 => "random2",
    };
    if kind == BaselineKind::SingleTask {
        let runs = (0..tasks.len())
            .into_par_iter()
            .map(|k| {
                let cfg = NetworkConfig {
                    head_dims: vec![net_config.head_dims[k]],
                    ..net_config.clone()
                };
                let mut single = config.clone();
                single.weights.task_weights = vec![config.weights.task_weights[k]];
                let u = DecisionMatrix::all_select(cfg.blocks, 1);
                retrain(
                    &cfg,
                    &tasks[k..=k],
                    &u,
                    &single,
                    &train.with_tasks(&[k]),
                    &val.with_tasks(&[k]),
                    derive_seed(seed, "task", k as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let metrics: Vec<Vec<Metric>> = runs.iter().map(|r| r.val_metrics[0].clone()).collect();
        let params = runs.iter().map(Retrained::params).sum();
        let flops = runs.iter().map(Retrained::flops).sum::<Result<u64>>()?;
        return MetricsReport::from_metrics(name, &names, metrics.clone(), &metrics, None, params, flops);
    }
    let reference = reference.ok_or_else(|| invalid("baseline needs single-task reference metrics"))?;
    let (blocks, k) = (net_config.blocks, tasks.len());
    let u = match kind {
        BaselineKind::HardSharing => DecisionMatrix::all_select(blocks, k),
        BaselineKind::Random1 | BaselineKind::Random2 => {
            let r = random_reference.ok_or_else(|| invalid("random baselines need reference decisions"))?;
            let mode = if kind == BaselineKind::Random1 {
                RandomPolicyMode::MatchTotal
            } else {
                RandomPolicyMode::MatchPerTask
            };
            random_policy(mode, r, seed)
        }
        BaselineKind::SingleTask => unreachable!(),
    };
    let r = retrain(net_config, tasks, &u, config, train, val, seed)?;
    MetricsReport::from_metrics(name, &names, r.val_metrics.clone(), reference, Some(u), r.params(), r.flops()?)
}
