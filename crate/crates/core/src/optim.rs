//! SGD with momentum for network weights, Adam for policy logits.

use std::collections::BTreeMap;

use crate::error::{invalid, Error, Result};
use crate::tensor::{ParamId, ParamStore};

fn take_grads(store: &mut ParamStore, params: &[ParamId]) -> Result<Vec<Vec<f64>>> {
    if let Some(missing) = params.iter().find(|id| store.get(**id).grad().is_none()) {
        return Err(Error::MissingGrad(store.name(*missing).to_string()));
    }
    Ok(params
        .iter()
        .map(|id| store.get_mut(*id).take_grad().unwrap())
        .collect())
}

/// Heavy-ball SGD: `v ← μ·v + g`, `w ← w − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: BTreeMap<ParamId, Vec<f64>>,
}

impl Sgd {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;

    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate {learning_rate} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(invalid(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Applies one update to `params` and clears their gradients.
    pub fn step(&mut self, store: &mut ParamStore, params: &[ParamId]) -> Result<()> {
        let grads = take_grads(store, params)?;
        for (id, g) in params.iter().zip(grads) {
            let v = self
                .velocity
                .entry(*id)
                .or_insert_with(|| vec![0.0; g.len()]);
            let w = store.get_mut(*id).data_mut();
            for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(&g) {
                *v = self.momentum * *v + g;
                *w -= self.learning_rate * *v;
            }
        }
        Ok(())
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    first_moment: BTreeMap<ParamId, Vec<f64>>,
    second_moment: BTreeMap<ParamId, Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Result<Self> {
        Self::with_betas(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate {learning_rate} must be positive")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(invalid(format!("betas ({beta1}, {beta2}) outside [0, 1)")));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(invalid(format!("epsilon {epsilon} must be positive")));
        }
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.second_moment.get(&id).map(Vec::as_slice)
    }

    pub fn step(&mut self, store: &mut ParamStore, params: &[ParamId]) -> Result<()> {
        let grads = take_grads(store, params)?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in params.iter().zip(grads) {
            let m = self
                .first_moment
                .entry(*id)
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .second_moment
                .entry(*id)
                .or_insert_with(|| vec![0.0; g.len()]);
            let w = store.get_mut(*id).data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                w[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(w: Vec<f64>, g: Vec<f64>) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(w).unwrap().with_grad()).unwrap();
        store.get_mut(id).accumulate_grad(&g);
        (store, id)
    }

    #[test]
    fn sgd_plain_update() {
        let (mut store, id) = store_with(vec![1.0], vec![0.5]);
        Sgd::new(0.1, 0.0).unwrap().step(&mut store, &[id]).unwrap();
        assert!((store.get(id).data()[0] - 0.95).abs() < 1e-15);
        assert!(store.get(id).grad().is_none());
    }

    #[test]
    fn sgd_zero_gradient_is_a_no_op() {
        let (mut store, id) = store_with(vec![1.0], vec![0.0]);
        Sgd::new(0.1, 0.9).unwrap().step(&mut store, &[id]).unwrap();
        assert_eq!(store.get(id).data()[0], 1.0);
    }

    #[test]
    fn sgd_momentum_matches_recurrence() {
        // hand-rolled: v1 = 0.5, w1 = 1 - 0.05; v2 = 0.5 + 0.9*0.5, w2 = w1 - 0.1*v2
        let (lr, mu, g) = (0.1, 0.9, 0.5);
        let (mut w_ref, mut v_ref) = (1.0f64, 0.0f64);
        for _ in 0..2 {
            v_ref = mu * v_ref + g;
            w_ref -= lr * v_ref;
        }
        assert!((w_ref - 0.855).abs() < 1e-12);

        let (mut store, id) = store_with(vec![1.0], vec![g]);
        let mut opt = Sgd::new(lr, mu).unwrap();
        opt.step(&mut store, &[id]).unwrap();
        store.get_mut(id).accumulate_grad(&[g]);
        opt.step(&mut store, &[id]).unwrap();
        assert!((store.get(id).data()[0] - w_ref).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0).with_grad()).unwrap();
        assert!(matches!(
            Sgd::new(0.1, 0.0).unwrap().step(&mut store, &[id]),
            Err(Error::MissingGrad(_))
        ));
        assert!(matches!(
            Adam::new(0.1).unwrap().step(&mut store, &[id]),
            Err(Error::MissingGrad(_))
        ));
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(Sgd::new(0.0, 0.9).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
        assert!(Adam::with_betas(0.1, 1.0, 0.9, 1e-8).is_err());
        assert!(Adam::with_betas(0.1, 0.9, 0.9, 0.0).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let (mut store, id) = store_with(vec![1.0], vec![0.5]);
        let mut opt = Adam::new(0.01).unwrap();
        opt.step(&mut store, &[id]).unwrap();
        // m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
        let expected = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((store.get(id).data()[0] - expected).abs() < 1e-15);
        assert!((store.get(id).data()[0] - 0.99).abs() < 1e-6);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_never_moves() {
        let (mut store, id) = store_with(vec![1.0], vec![0.0]);
        let mut opt = Adam::new(0.01).unwrap();
        for step in 1..=5 {
            if step > 1 {
                store.get_mut(id).accumulate_grad(&[0.0]);
            }
            opt.step(&mut store, &[id]).unwrap();
            assert_eq!(opt.step_count(), step);
        }
        assert_eq!(store.get(id).data()[0], 1.0);
    }

    #[test]
    fn adam_equal_gradients_equal_updates() {
        let (mut store, id) = store_with(vec![0.3, -2.0], vec![0.7, 0.7]);
        let mut opt = Adam::new(0.05).unwrap();
        opt.step(&mut store, &[id]).unwrap();
        let w = store.get(id).data();
        assert!(((0.3 - w[0]) - (-2.0 - w[1])).abs() < 1e-14);
        assert!(opt.second_moment(id).unwrap().iter().all(|v| *v >= 0.0));
    }
}
