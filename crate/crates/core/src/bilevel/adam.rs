use crate::error::{Error, Result};
use crate::tensor::Param;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Moment estimates for one fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[&Param]) -> Self {
        let zeros = |p: &&Param| vec![0.0; p.value().len()];
        AdamState { m: params.iter().map(zeros).collect(), s: params.iter().map(zeros).collect(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update from each parameter's accumulated
/// gradient; gradients are zeroed afterwards.
pub fn adam_step(state: &mut AdamState, params: Vec<&mut Param>, cfg: &AdamConfig) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::shape("adam_step", format!("{} params for {} moment slots", params.len(), state.m.len())));
    }
    for (i, p) in params.iter().enumerate() {
        if p.value().len() != state.m[i].len() {
            return Err(Error::shape("adam_step", format!("param {} has {} entries, state {}", i, p.value().len(), state.m[i].len())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), s) in params.into_iter().zip(&mut state.m).zip(&mut state.s) {
        let (value, grad) = p.buffers_mut();
        for j in 0..value.len() {
            let g = grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            s[j] = cfg.beta2 * s[j] + (1.0 - cfg.beta2) * g * g;
            let update = cfg.lr * (m[j] / c1) / ((s[j] / c2).sqrt() + cfg.eps);
            value[j] -= update;
            grad[j] = 0.0;
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("adam_step", "parameter became non-finite"));
        }
    }
    Ok(())
}
