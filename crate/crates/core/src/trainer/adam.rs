use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{Gradients, HeadParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates, shaped like the head's parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(head: &HeadParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f32>> = head.blocks().iter().map(|b| vec![0.0; b.data.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub(crate) fn matches(&self, head: &HeadParams) -> bool {
        let blocks = head.blocks();
        self.first.len() == blocks.len()
            && self.second.len() == blocks.len()
            && blocks
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|(b, (m, v))| m.len() == b.data.len() && v.len() == b.data.len())
    }
}

/// One bias-corrected Adam update. Moments and parameters are stored in
/// single precision; the update itself is computed in double precision.
pub fn adam_step(head: &mut HeadParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !state.matches(head) {
        return Err(Error::usage("optimizer state does not match the head's parameters"));
    }
    let names: Vec<&'static str> = head.blocks().iter().map(|b| b.name).collect();
    if grads.blocks.len() != names.len() {
        return Err(Error::usage("gradient blocks do not match the head's parameters"));
    }
    for ((g, name), m) in grads.blocks.iter().zip(&names).zip(&state.first) {
        Error::check_dim(m.len(), g.len())?;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }

    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((params, g), m), v) in head
        .blocks_mut()
        .into_iter()
        .zip(&grads.blocks)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for k in 0..params.len() {
            let gk = g[k];
            let mk = beta1 * m[k] as f64 + (1.0 - beta1) * gk;
            let vk = beta2 * v[k] as f64 + (1.0 - beta2) * gk * gk;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let update = lr * (mk / c1) / ((vk / c2).sqrt() + eps);
            params[k] = (params[k] as f64 - update) as f32;
        }
    }
    Ok(())
}
