//! Shared residual trunk with task-specific heads.
//!
//! ```text
//! h_0 = stem(x)
//! h_l = h_{l-1} + gate_{l,k} · F_l(h_{l-1})      F_l = fc2 ∘ relu ∘ fc1
//! y_k = head_k(h_L)
//! ```
//!
//! All blocks keep the trunk width, so any subset can be skipped. Sharing
//! between tasks comes only from which blocks their gates execute.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Inputs, Var};
use crate::policy::{DecisionMatrix, PolicyLogits, SoftDecision};
use crate::rng;
use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub width: usize,
    pub blocks: usize,
    /// Output width of each task head.
    pub head_dims: Vec<usize>,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.blocks == 0 {
            return Err(invalid("input_dim, width and blocks must be positive"));
        }
        if self.head_dims.is_empty() || self.head_dims.contains(&0) {
            return Err(invalid("every task needs a head of positive width"));
        }
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.head_dims.len()
    }
}

/// `y = x·W + b` with `W` of shape `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Affine {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, seed: u64) -> Result<Self> {
        let std = gain / (fan_in as f64).sqrt();
        let mut rng = rng::stream(seed, name, 0);
        let w = (0..fan_in * fan_out)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::matrix(fan_in, fan_out, w)?.with_grad(),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])?.with_grad())?;
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn macs(&self) -> u64 {
        (self.fan_in * self.fan_out) as u64
    }

    fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    fn bind(&self, g: &mut Graph) -> BoundAffine {
        BoundAffine {
            weight: g.param(self.weight),
            bias: g.param(self.bias),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub fc1: Affine,
    pub fc2: Affine,
}

impl ResidualBlock {
    pub fn width(&self) -> usize {
        self.fc1.fan_in
    }

    pub fn macs(&self) -> u64 {
        self.fc1.macs() + self.fc2.macs()
    }
}

/// How block `l` is applied on one task's path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    /// `h + F(h)`.
    Execute,
    /// `h`; the transform is not evaluated.
    Skip,
    /// `h + v·F(h)` with a scalar node `v`.
    Soft(Var),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskNetwork {
    config: NetworkConfig,
    stem: Affine,
    /// `None` for blocks pruned from a retrain architecture.
    blocks: Vec<Option<ResidualBlock>>,
    heads: Vec<Affine>,
}

/// Gain applied to the second layer of each block so the trunk starts close
/// to the identity map.
const RESIDUAL_GAIN: f64 = 0.5;

impl MultiTaskNetwork {
    /// Registers a freshly initialized network in `store`.
    pub fn new(store: &mut ParamStore, config: NetworkConfig, seed: u64) -> Result<Self> {
        let active = vec![true; config.blocks];
        Self::with_active_blocks(store, config, &active, seed)
    }

    /// Like [`MultiTaskNetwork::new`] but only materializes blocks with
    /// `active[l]` set.
    pub fn with_active_blocks(
        store: &mut ParamStore,
        config: NetworkConfig,
        active: &[bool],
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if active.len() != config.blocks {
            return Err(invalid("one activity flag per block"));
        }
        let w = config.width;
        let stem = Affine::new(store, "stem", config.input_dim, w, 1.0, seed)?;
        let blocks = active
            .iter()
            .enumerate()
            .map(|(l, &on)| {
                on.then(|| -> Result<ResidualBlock> {
                    Ok(ResidualBlock {
                        fc1: Affine::new(store, &format!("block{l}.fc1"), w, w, 2f64.sqrt(), seed)?,
                        fc2: Affine::new(store, &format!("block{l}.fc2"), w, w, RESIDUAL_GAIN, seed)?,
                    })
                })
                .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let heads = config
            .head_dims
            .iter()
            .enumerate()
            .map(|(k, &d)| Affine::new(store, &format!("head{k}"), w, d, 1.0, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            stem,
            blocks,
            heads,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn block_count(&self) -> usize {
        self.config.blocks
    }

    pub fn task_count(&self) -> usize {
        self.heads.len()
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn block(&self, l: usize) -> Option<&ResidualBlock> {
        self.blocks.get(l).and_then(Option::as_ref)
    }

    pub fn head(&self, k: usize) -> &Affine {
        &self.heads[k]
    }

    pub fn stem(&self) -> &Affine {
        &self.stem
    }

    /// Every parameter of the network, stem first, then blocks, then heads.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.stem.params().to_vec();
        for b in self.blocks.iter().flatten() {
            ids.extend(b.fc1.params());
            ids.extend(b.fc2.params());
        }
        for h in &self.heads {
            ids.extend(h.params());
        }
        ids
    }

    pub fn trunk_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.stem.params().to_vec();
        for b in self.blocks.iter().flatten() {
            ids.extend(b.fc1.params());
            ids.extend(b.fc2.params());
        }
        ids
    }

    pub fn head_param_ids(&self, k: usize) -> Vec<ParamId> {
        self.heads[k].params().to_vec()
    }

    /// Adds one node per parameter to `g`; the returned handle runs forward
    /// passes for any task against those nodes.
    pub fn bind(&self, g: &mut Graph) -> BoundNetwork<'_> {
        BoundNetwork {
            net: self,
            stem: self.stem.bind(g),
            blocks: self
                .blocks
                .iter()
                .map(|b| b.as_ref().map(|b| (b.fc1.bind(g), b.fc2.bind(g))))
                .collect(),
            heads: self.heads.iter().map(|h| h.bind(g)).collect(),
        }
    }

    fn check_decisions(&self, u: &DecisionMatrix) -> Result<()> {
        if u.blocks() != self.block_count() || u.tasks() != self.task_count() {
            return Err(invalid(format!(
                "{}×{} decisions for a network with {} blocks and {} tasks",
                u.blocks(),
                u.tasks(),
                self.block_count(),
                self.task_count()
            )));
        }
        Ok(())
    }

    /// Multiply-accumulates per example along task `k`'s path under `u`.
    pub fn count_flops(&self, u: &DecisionMatrix, k: usize) -> Result<u64> {
        self.check_decisions(u)?;
        let block_macs = 2 * (self.config.width * self.config.width) as u64;
        let executed = (0..self.block_count()).filter(|&l| u.get(l, k)).count() as u64;
        Ok(self.stem.macs() + executed * block_macs + self.heads[k].macs())
    }

    /// Runs task `k` on `x` under relaxed decisions `v`.
    pub fn predict_soft(&self, store: &ParamStore, x: &Tensor, k: usize, v: &SoftDecision) -> Result<Tensor> {
        if v.blocks() != self.block_count() || k >= v.tasks() {
            return Err(invalid("soft decisions do not cover the network"));
        }
        let mut g = Graph::new();
        let xv = g.input("x");
        let net = self.bind(&mut g);
        let gates: Vec<Gate> = (0..self.block_count())
            .map(|l| Gate::Soft(g.constant(Tensor::scalar(v.get(l, k)[1]))))
            .collect();
        let y = net.forward(&mut g, xv, k, &gates)?;
        eval_single(&mut g, store, x, y)
    }

    /// Runs task `k` on `x` under binary decisions `u`.
    pub fn predict_hard(&self, store: &ParamStore, x: &Tensor, k: usize, u: &DecisionMatrix) -> Result<Tensor> {
        self.check_decisions(u)?;
        let mut g = Graph::new();
        let xv = g.input("x");
        let net = self.bind(&mut g);
        let y = net.forward_hard(&mut g, xv, k, u)?;
        eval_single(&mut g, store, x, y)
    }
}

fn eval_single(g: &mut Graph, store: &ParamStore, x: &Tensor, y: Var) -> Result<Tensor> {
    let mut inputs = Inputs::new();
    inputs.insert("x".into(), x.clone());
    g.forward(store, &inputs)?;
    Ok(g.value(y)?.clone())
}

struct BoundAffine {
    weight: Var,
    bias: Var,
}

impl BoundAffine {
    fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let y = g.matmul(x, self.weight);
        g.add(y, self.bias)
    }
}

/// A network whose parameters have been added to a graph.
pub struct BoundNetwork<'a> {
    net: &'a MultiTaskNetwork,
    stem: BoundAffine,
    blocks: Vec<Option<(BoundAffine, BoundAffine)>>,
    heads: Vec<BoundAffine>,
}

impl BoundNetwork<'_> {
    pub fn forward(&self, g: &mut Graph, x: Var, k: usize, gates: &[Gate]) -> Result<Var> {
        if k >= self.heads.len() {
            return Err(Error::OutOfRange(format!("task {k} of {}", self.heads.len())));
        }
        if gates.len() != self.blocks.len() {
            return Err(invalid(format!(
                "{} gates for {} blocks",
                gates.len(),
                self.blocks.len()
            )));
        }
        let mut h = self.stem.apply(g, x);
        for (l, gate) in gates.iter().enumerate() {
            h = self.apply_block(g, l, *gate, h)?;
        }
        Ok(self.heads[k].apply(g, h))
    }

    /// Forward passes for all tasks at once, `gates[k]` being task `k`'s
    /// gates. Tasks whose gates agree on a prefix of blocks reuse the trunk
    /// nodes for that prefix.
    pub fn forward_tasks(&self, g: &mut Graph, x: Var, gates: &[Vec<Gate>]) -> Result<Vec<Var>> {
        if gates.len() != self.heads.len() {
            return Err(invalid(format!(
                "gates for {} tasks, network has {}",
                gates.len(),
                self.heads.len()
            )));
        }
        if let Some(gs) = gates.iter().find(|gs| gs.len() != self.blocks.len()) {
            return Err(invalid(format!("{} gates for {} blocks", gs.len(), self.blocks.len())));
        }
        let stem = self.stem.apply(g, x);
        let mut trunks: Vec<Vec<Var>> = Vec::with_capacity(gates.len());
        for (k, gs) in gates.iter().enumerate() {
            let mut h = stem;
            let mut path = Vec::with_capacity(gs.len());
            for l in 0..gs.len() {
                h = match (0..k).find(|&j| gates[j][..=l] == gs[..=l]) {
                    Some(j) => trunks[j][l],
                    None => self.apply_block(g, l, gs[l], h)?,
                };
                path.push(h);
            }
            trunks.push(path);
        }
        Ok(trunks
            .iter()
            .zip(&self.heads)
            .map(|(path, head)| head.apply(g, path.last().copied().unwrap_or(stem)))
            .collect())
    }

    fn apply_block(&self, g: &mut Graph, l: usize, gate: Gate, h: Var) -> Result<Var> {
        if gate == Gate::Skip {
            return Ok(h);
        }
        let (fc1, fc2) = self.blocks[l]
            .as_ref()
            .ok_or_else(|| invalid(format!("block {l} is not part of this architecture")))?;
        let a = fc1.apply(g, h);
        let a = g.relu(a);
        let f = fc2.apply(g, a);
        let f = match gate {
            Gate::Soft(v) => g.mul(f, v),
            _ => f,
        };
        Ok(g.add(h, f))
    }

    /// Hard-decision passes for all tasks, sharing common prefixes.
    pub fn forward_tasks_hard(&self, g: &mut Graph, x: Var, u: &DecisionMatrix) -> Result<Vec<Var>> {
        self.net.check_decisions(u)?;
        let gates: Vec<Vec<Gate>> = (0..u.tasks())
            .map(|k| {
                (0..u.blocks())
                    .map(|l| if u.get(l, k) { Gate::Execute } else { Gate::Skip })
                    .collect()
            })
            .collect();
        self.forward_tasks(g, x, &gates)
    }

    /// `h_l = h_{l-1} + v_l · F_l(h_{l-1})` for one select weight per block.
    pub fn forward_soft(&self, g: &mut Graph, x: Var, k: usize, select: &[Var]) -> Result<Var> {
        let gates: Vec<Gate> = select.iter().map(|v| Gate::Soft(*v)).collect();
        self.forward(g, x, k, &gates)
    }

    pub fn forward_hard(&self, g: &mut Graph, x: Var, k: usize, u: &DecisionMatrix) -> Result<Var> {
        self.net.check_decisions(u)?;
        let gates: Vec<Gate> = (0..u.blocks())
            .map(|l| if u.get(l, k) { Gate::Execute } else { Gate::Skip })
            .collect();
        self.forward(g, x, k, &gates)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub network_params: usize,
    pub policy_params: usize,
    /// Cost of one task: its `L` policy logits plus its head.
    pub per_task_marginal: Vec<usize>,
}

pub fn count_parameters(net: &MultiTaskNetwork, store: &ParamStore, logits: &PolicyLogits) -> ParameterCount {
    ParameterCount {
        network_params: store.numel(&net.param_ids()),
        policy_params: logits.parameter_count(),
        per_task_marginal: (0..net.task_count())
            .map(|k| logits.blocks() + store.numel(&net.head_param_ids(k)))
            .collect(),
    }
}

/// Fresh network for retraining under `u`: blocks no task selects are
/// dropped, blocks selected by several tasks are shared, and every
/// parameter is newly initialized from `seed`.
pub fn build_subnetwork(
    template: &MultiTaskNetwork,
    u: &DecisionMatrix,
    seed: u64,
) -> Result<(ParamStore, MultiTaskNetwork)> {
    template.check_decisions(u)?;
    subnetwork_for(&template.config, u, seed)
}

/// [`build_subnetwork`] from a configuration alone.
pub fn subnetwork_for(config: &NetworkConfig, u: &DecisionMatrix, seed: u64) -> Result<(ParamStore, MultiTaskNetwork)> {
    if u.blocks() != config.blocks || u.tasks() != config.tasks() {
        return Err(invalid(format!(
            "{}×{} decisions for a network with {} blocks and {} tasks",
            u.blocks(),
            u.tasks(),
            config.blocks,
            config.tasks()
        )));
    }
    let active: Vec<bool> = (0..u.blocks()).map(|l| u.block_used(l)).collect();
    let mut store = ParamStore::new();
    let net = MultiTaskNetwork::with_active_blocks(&mut store, config.clone(), &active, seed)?;
    Ok((store, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{GumbelDraw, Provenance};

    fn config() -> NetworkConfig {
        NetworkConfig {
            input_dim: 5,
            width: 6,
            blocks: 4,
            head_dims: vec![3, 2],
        }
    }

    fn input(rows: usize) -> Tensor {
        let data = (0..rows * 5).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        Tensor::matrix(rows, 5, data).unwrap()
    }

    fn manual_forward(net: &MultiTaskNetwork, store: &ParamStore, x: &Tensor, k: usize, exec: &[bool]) -> Vec<f64> {
        // plain-loop oracle
        let affine = |a: &Affine, h: &[f64], rows: usize| -> Vec<f64> {
            let w = store.get(a.weight).data();
            let b = store.get(a.bias).data();
            let mut out = vec![0.0; rows * a.fan_out];
            for r in 0..rows {
                for j in 0..a.fan_out {
                    let mut s = b[j];
                    for i in 0..a.fan_in {
                        s += h[r * a.fan_in + i] * w[i * a.fan_out + j];
                    }
                    out[r * a.fan_out + j] = s;
                }
            }
            out
        };
        let rows = x.shape()[0];
        let mut h = affine(net.stem(), x.data(), rows);
        for (l, &on) in exec.iter().enumerate() {
            if on {
                let b = net.block(l).unwrap();
                let a: Vec<f64> = affine(&b.fc1, &h, rows).into_iter().map(|v| v.max(0.0)).collect();
                let f = affine(&b.fc2, &a, rows);
                h.iter_mut().zip(f).for_each(|(h, f)| *h += f);
            }
        }
        affine(net.head(k), &h, rows)
    }

    #[test]
    fn hard_forward_matches_loop_oracle() {
        let mut store = ParamStore::new();
        let net = MultiTaskNetwork::new(&mut store, config(), 3).unwrap();
        let u = DecisionMatrix::from_rows(&[&[1, 0], &[0, 1], &[1, 1], &[0, 0]], Provenance::Manual).unwrap();
        let x = input(7);
        for k in 0..2 {
            let y = net.predict_hard(&store, &x, k, &u).unwrap();
            let exec: Vec<bool> = (0..4).map(|l| u.get(l, k)).collect();
            let oracle = manual_forward(&net, &store, &x, k, &exec);
            for (a, b) in y.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_prefix_forward_matches_separate_passes() {
        let mut store = ParamStore::new();
        let cfg = NetworkConfig {
            head_dims: vec![3, 2, 2],
            ..config()
        };
        let net = MultiTaskNetwork::new(&mut store, cfg, 5).unwrap();
        let u = DecisionMatrix::from_rows(&[&[1, 1, 0], &[1, 1, 1], &[0, 1, 1], &[1, 1, 0]], Provenance::Manual)
            .unwrap();
        let x = input(6);
        let mut g = Graph::new();
        let xv = g.input("x");
        let bound = net.bind(&mut g);
        let ys = bound.forward_tasks_hard(&mut g, xv, &u).unwrap();
        let nodes_shared = g.len();
        let mut inputs = Inputs::new();
        inputs.insert("x".into(), x.clone());
        g.forward(&store, &inputs).unwrap();
        for (k, y) in ys.iter().enumerate() {
            let separate = net.predict_hard(&store, &x, k, &u).unwrap();
            assert_eq!(g.value(*y).unwrap().data(), separate.data());
        }

        let mut g2 = Graph::new();
        let xv = g2.input("x");
        let bound = net.bind(&mut g2);
        for k in 0..3 {
            bound.forward_hard(&mut g2, xv, k, &u).unwrap();
        }
        assert!(nodes_shared < g2.len());
    }

    #[test]
    fn soft_all_zero_is_stem_then_head() {
        let mut store = ParamStore::new();
        let net = MultiTaskNetwork::new(&mut store, config(), 3).unwrap();
        let zero = DecisionMatrix::new(4, 2, vec![false; 8], Provenance::Manual).unwrap();
        let x = input(4);
        let soft = net.predict_soft(&store, &x, 1, &SoftDecision::from_decisions(&zero)).unwrap();
        let oracle = manual_forward(&net, &store, &x, 1, &[false; 4]);
        for (a, b) in soft.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let hard = net.predict_hard(&store, &x, 1, &zero).unwrap();
        assert_eq!(soft.data(), hard.data());
    }

    #[test]
    fn binary_soft_equals_hard_bitwise() {
        let mut store = ParamStore::new();
        let net = MultiTaskNetwork::new(&mut store, config(), 9).unwrap();
        let x = input(5);
        for seed in 0..6 {
            let p = PolicyLogits::zeros(4, 2).unwrap();
            let u = p.hard_decision(&GumbelDraw::draw(4, 2, seed)).unwrap();
            for k in 0..2 {
                let soft = net.predict_soft(&store, &x, k, &SoftDecision::from_decisions(&u)).unwrap();
                let hard = net.predict_hard(&store, &x, k, &u).unwrap();
                let sb: Vec<u64> = soft.data().iter().map(|v| v.to_bits()).collect();
                let hb: Vec<u64> = hard.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(sb, hb);
            }
        }
        let all = DecisionMatrix::all_select(4, 2);
        let full = net.predict_hard(&store, &x, 0, &all).unwrap();
        let oracle = manual_forward(&net, &store, &x, 0, &[true; 4]);
        assert!(full.data().iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn flops_accounting() {
        let mut store = ParamStore::new();
        let cfg = NetworkConfig {
            input_dim: 10,
            width: 16,
            blocks: 2,
            head_dims: vec![3],
        };
        let net = MultiTaskNetwork::new(&mut store, cfg, 0).unwrap();
        // stem 10·16 + 2 blocks · (16·16 + 16·16) + head 16·3
        let all = DecisionMatrix::all_select(2, 1);
        assert_eq!(net.count_flops(&all, 0).unwrap(), 160 + 2 * 512 + 48);
        let none = DecisionMatrix::new(2, 1, vec![false; 2], Provenance::Manual).unwrap();
        assert_eq!(net.count_flops(&none, 0).unwrap(), 160 + 48);
        assert_eq!(
            net.count_flops(&all, 0).unwrap() - net.count_flops(&none, 0).unwrap(),
            2 * net.block(0).unwrap().macs()
        );

        let mut store = ParamStore::new();
        let net = MultiTaskNetwork::new(
            &mut store,
            NetworkConfig { input_dim: 4, width: 8, blocks: 8, head_dims: vec![2] },
            0,
        )
        .unwrap();
        let half = DecisionMatrix::from_rows(&[&[1], &[0], &[1], &[0], &[1], &[0], &[1], &[0]], Provenance::Manual).unwrap();
        let block_part = |u: &DecisionMatrix| net.count_flops(u, 0).unwrap() - 4 * 8 - 8 * 2;
        assert_eq!(2 * block_part(&half), block_part(&DecisionMatrix::all_select(8, 1)));
    }

    #[test]
    fn parameter_counts() {
        for blocks in [4, 8, 16] {
            let cfg = |k: usize| NetworkConfig {
                input_dim: 3,
                width: 4,
                blocks,
                head_dims: vec![2; k],
            };
            let mut s2 = ParamStore::new();
            let n2 = MultiTaskNetwork::new(&mut s2, cfg(2), 0).unwrap();
            let c2 = count_parameters(&n2, &s2, &PolicyLogits::zeros(blocks, 2).unwrap());
            let mut s3 = ParamStore::new();
            let n3 = MultiTaskNetwork::new(&mut s3, cfg(3), 0).unwrap();
            let c3 = count_parameters(&n3, &s3, &PolicyLogits::zeros(blocks, 3).unwrap());
            assert_eq!(c2.policy_params, 2 * blocks);
            assert_eq!(c3.policy_params - c2.policy_params, blocks);
            assert_eq!(store_trunk(&n2, &s2), store_trunk(&n3, &s3));
            assert_eq!(c3.per_task_marginal[2], blocks + 4 * 2 + 2);
        }
    }

    fn store_trunk(net: &MultiTaskNetwork, store: &ParamStore) -> usize {
        store.numel(&net.trunk_param_ids())
    }

    #[test]
    fn subnetwork_is_fresh_and_pruned() {
        let mut store = ParamStore::new();
        let template = MultiTaskNetwork::new(&mut store, config(), 1).unwrap();
        let (fresh, same) = build_subnetwork(&template, &DecisionMatrix::all_select(4, 2), 2).unwrap();
        assert_eq!(same.param_ids().len(), template.param_ids().len());
        assert_ne!(fresh.get(same.stem().weight).data(), store.get(template.stem().weight).data());
        let (again, _) = build_subnetwork(&template, &DecisionMatrix::all_select(4, 2), 2).unwrap();
        assert_eq!(fresh, again);

        let u = DecisionMatrix::from_rows(&[&[1, 1], &[0, 0], &[1, 0], &[0, 1]], Provenance::Manual).unwrap();
        let (pruned_store, pruned) = build_subnetwork(&template, &u, 2).unwrap();
        assert!(pruned.block(1).is_none());
        assert!(pruned.block(0).is_some());
        assert_eq!(pruned.param_ids().len(), template.param_ids().len() - 4);
        // both tasks read block 0 through the same parameter handles
        let mut g = Graph::new();
        let x = g.input("x");
        let bound = pruned.bind(&mut g);
        let before = g.len();
        bound.forward_hard(&mut g, x, 0, &u).unwrap();
        bound.forward_hard(&mut g, x, 1, &u).unwrap();
        assert!(g.len() > before);
        assert_eq!(pruned_store.len(), pruned.param_ids().len());
        // executing a pruned block fails
        assert!(pruned.predict_hard(&pruned_store, &input(2), 0, &DecisionMatrix::all_select(4, 2)).is_err());
    }

    #[test]
    fn shape_errors_surface() {
        let mut store = ParamStore::new();
        let net = MultiTaskNetwork::new(&mut store, config(), 1).unwrap();
        let wrong = Tensor::matrix(2, 4, vec![0.0; 8]).unwrap();
        let err = net.predict_hard(&store, &wrong, 0, &DecisionMatrix::all_select(4, 2));
        assert!(matches!(err, Err(Error::Shape { .. })));
        assert!(net.predict_hard(&store, &input(2), 0, &DecisionMatrix::all_select(3, 2)).is_err());
    }
}
