use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd {
        momentum: f64,
    },
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Adam => f.write_str("adam"),
            OptimizerKind::Sgd { .. } => f.write_str("sgd"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd { momentum: 0.9 }),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Optimizer moments for a list of parameters.
///
/// Adam keeps first and second moments; SGD keeps its velocity in `m` and
/// leaves `v` empty.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = match kind {
            OptimizerKind::Adam => zeros(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            step: 0,
            m: zeros(),
            v,
        }
    }
}

fn validate(params: &[&mut Tensor], grads: &[Tensor], state: &OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "{} params, {} grads, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(format!(
                "parameter {i}: {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {i}; step rejected"
            )));
        }
    }
    Ok(())
}

/// One Adam update with classic L2 weight decay folded into the gradient.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    validate(params, grads, state)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j] + weight_decay * *w;
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            *w -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Heavy-ball SGD: `v <- mu v + g + wd w`, `w <- w - lr v`.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    validate(params, grads, state)?;
    let OptimizerKind::Sgd { momentum } = state.kind else {
        return Err(Error::contract("sgd_step on a non-SGD optimizer state"));
    };
    state.step += 1;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let vel = state.m[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            vel[j] = momentum * vel[j] + g[j] + weight_decay * *w;
            *w -= lr * vel[j];
        }
    }
    Ok(())
}

/// Dispatches on the state's optimizer kind.
pub fn optimizer_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    match state.kind {
        OptimizerKind::Adam => adam_step(params, grads, state, lr, weight_decay),
        OptimizerKind::Sgd { .. } => sgd_step(params, grads, state, lr, weight_decay),
    }
}
