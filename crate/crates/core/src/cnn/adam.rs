use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("adam betas", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(like: &Params<T>) -> Self {
        let mut m = like.clone();
        m.values_mut().for_each(|x| *x = T::zero());
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::dims("adam_step", n, grads.len()));
    }
    state.step += 1;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let c1 = T::lit(1.0 - cfg.beta1.powf(state.step as f64));
    let c2 = T::lit(1.0 - cfg.beta2.powf(state.step as f64));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    for (((p, g), m), v) in params
        .values_mut()
        .zip(grads.values())
        .zip(state.m.values_mut())
        .zip(state.v.values_mut())
    {
        *m = b1 * *m + (one - b1) * *g;
        *v = b2 * *v + (one - b2) * *g * *g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
