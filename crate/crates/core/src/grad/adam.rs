//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::{GroupSet, Matrix, ParamGrads, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Settings of the mixture-of-Gaussians study; `eps` is the usual 1e-8.
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be a positive finite number"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }
}

/// Moment estimates of one parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Matrix<T>,
    pub v: Matrix<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
        }
    }

    /// One in-place update of `param` from `grad`.
    pub fn step(&mut self, cfg: &AdamConfig, param: &mut Matrix<T>, grad: Option<&Matrix<T>>) -> Result<()> {
        let grad = grad.ok_or_else(|| Error::contract("adam step without a gradient"))?;
        if grad.shape() != param.shape() || self.m.shape() != param.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: param.shape(),
                rhs: grad.shape(),
            });
        }
        self.t += 1;
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let one = T::one();
        let c1 = one - T::of(cfg.beta1.powi(self.t as i32));
        let c2 = one - T::of(cfg.beta2.powi(self.t as i32));
        let lr = T::of(cfg.lr);
        let eps = T::of(cfg.eps);
        let (m, v) = (self.m.as_mut_slice(), self.v.as_mut_slice());
        for (((p, &g), m), v) in param
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Independent Adam state per parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    states: Vec<Option<AdamState<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: Vec::new(),
        }
    }

    /// Descends every parameter in `groups`; each must have a gradient.
    /// Consumes the gradients so they cannot be applied twice.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: ParamGrads<T>, groups: GroupSet) -> Result<()> {
        if self.states.len() < store.len() {
            self.states.resize_with(store.len(), || None);
        }
        let ids: Vec<_> = store.ids_in(groups).collect();
        for id in ids {
            let grad = grads
                .get(id)
                .ok_or_else(|| Error::MissingGradient(store.get(id).name.clone()))?;
            let value = store.value_mut(id);
            let state = self.states[id.index()]
                .get_or_insert_with(|| AdamState::new(value.rows(), value.cols()));
            state.step(&self.config, value, Some(grad))?;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.iter().flatten().map(|s| s.t).max().unwrap_or(0)
    }
}
