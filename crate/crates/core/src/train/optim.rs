use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `v ← μv + g; p ← p − lr·v`.
    SgdMomentum { momentum: f64 },
    /// Bias-corrected first/second moment estimates.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::SgdMomentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-tensor optimizer state; `first` doubles as the SGD velocity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl OptimState {
    pub fn zeros(n: usize) -> Self {
        Self { first: vec![0.0; n], second: vec![0.0; n], steps: 0 }
    }
}

/// One update of `params` from `grads`.
pub fn optimizer_step(
    kind: OptimizerKind,
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first.len() != n || state.second.len() != n {
        return Err(Error::dim(format!(
            "optimizer: {n} params, {} grads, state sized {}",
            grads.len(),
            state.first.len()
        )));
    }
    state.steps += 1;
    match kind {
        OptimizerKind::SgdMomentum { momentum } => {
            for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.first) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let t = state.steps as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// Optimizer over an ordered list of tensors, reading each tensor's gradient
/// (absent gradients count as zero).
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    states: Vec<OptimState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &[Tensor]) -> Self {
        Self { kind, states: params.iter().map(|t| OptimState::zeros(t.numel())).collect() }
    }

    pub fn step(&mut self, params: &mut [Tensor], lr: f64) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} tensors, got {}",
                self.states.len(),
                params.len()
            )));
        }
        for (t, state) in params.iter_mut().zip(&mut self.states) {
            let grad = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
            optimizer_step(self.kind, t.data_mut(), &grad, state, lr)?;
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm(params: &mut [Tensor], max_norm: f64) -> Result<f64> {
    let norm = params
        .iter()
        .filter_map(Tensor::grad)
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in params.iter_mut() {
            if let Some(g) = t.grad() {
                let scaled: Vec<f64> = g.iter().map(|v| v * s).collect();
                t.zero_grad();
                t.accumulate_grad(&scaled)?;
            }
        }
    }
    Ok(norm)
}
