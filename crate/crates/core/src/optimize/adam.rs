//! Bias-corrected Adam over named parameter tensors, with independent
//! learning rates for the MLP head and the conditioning feature grid, plus
//! exponential moving averages.

use crate::error::{Error, Result};
use crate::field::{param_group, FieldGrads, FieldParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One Adam update on a single tensor. Fails fast on non-finite gradients.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam buffers: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("gradient passed to adam".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// `ema <- decay * ema + (1 - decay) * params`.
pub fn ema_update(ema: &mut [f64], params: &[f64], decay: f64) {
    debug_assert_eq!(ema.len(), params.len());
    for (e, p) in ema.iter_mut().zip(params) {
        *e = decay * *e + (1.0 - decay) * p;
    }
}

/// Per-group learning rates; every named tensor belongs to exactly one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGroups {
    pub lr_mlp: f64,
    pub lr_triplane: f64,
}

impl Default for ParamGroups {
    fn default() -> Self {
        ParamGroups { lr_mlp: 1e-4, lr_triplane: 5e-2 }
    }
}

impl ParamGroups {
    pub fn lr_for(&self, name: &str) -> f64 {
        match param_group(name) {
            "mlp" => self.lr_mlp,
            _ => self.lr_triplane,
        }
    }
}

/// Adam states for every tensor of a [`FieldParams`].
#[derive(Debug, Clone)]
pub struct FieldOptimizer {
    pub hyper: AdamHyper,
    pub groups: ParamGroups,
    states: Vec<AdamState>,
}

impl FieldOptimizer {
    pub fn new(fp: &FieldParams, groups: ParamGroups) -> Self {
        let states = fp.tensors().iter().map(|(_, t)| AdamState::new(t.len())).collect();
        FieldOptimizer { hyper: AdamHyper::default(), groups, states }
    }

    pub fn step(&mut self, fp: &mut FieldParams, grads: &FieldGrads) -> Result<()> {
        let grad_tensors = grads.tensors();
        let mut param_tensors = fp.tensors_mut();
        debug_assert_eq!(grad_tensors.len(), param_tensors.len());
        for (i, (name, params)) in param_tensors.iter_mut().enumerate() {
            debug_assert_eq!(*name, grad_tensors[i].0);
            let lr = self.groups.lr_for(name);
            adam_step(&mut self.states[i], params, grad_tensors[i].1, lr, &self.hyper)?;
        }
        fp.validate_finite()
    }
}

/// Global-norm gradient clipping; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut FieldGrads, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
