//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::risk::{Gradients, RiskModel};

/// First/second moment accumulators per parameter plus hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(model: &RiskModel, lr: f64) -> Result<Self> {
        if lr <= 0.0 || !lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = model
            .layers()
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }
}

/// One Adam update. Fails on a non-finite gradient, naming the parameter.
pub fn adam_step(model: &mut RiskModel, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != model.layers().len() {
        return Err(Error::Numeric("gradient layer count mismatch".into()));
    }
    for (l, (layer, grad)) in model.layers().iter().zip(&grads.layers).enumerate() {
        if grad.weights.len() != layer.weights.len() || grad.bias.len() != layer.bias.len() {
            return Err(Error::Numeric(format!(
                "gradient shapes mismatch in layer {l}"
            )));
        }
        if let Some(i) = grad.weights.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for layer {l} weights[{i}]"
            )));
        }
        if let Some(i) = grad.bias.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for layer {l} bias[{i}]"
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for (l, grad) in grads.layers.iter().enumerate() {
        let (mw, mb) = &mut state.m[l];
        let (vw, vb) = &mut state.v[l];
        let layer = &mut model.layers_mut()[l];
        update_slice(
            &mut layer.weights,
            &grad.weights,
            mw,
            vw,
            state.lr,
            state.beta1,
            state.beta2,
            state.epsilon,
            bc1,
            bc2,
        );
        update_slice(
            &mut layer.bias,
            &grad.bias,
            mb,
            vb,
            state.lr,
            state.beta1,
            state.beta2,
            state.epsilon,
            bc1,
            bc2,
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}
