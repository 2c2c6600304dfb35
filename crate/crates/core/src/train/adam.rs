use crate::autodiff::{NamedTensor, Tensor};

use super::TrainError;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[NamedTensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect(),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// One bias-corrected Adam update.
///
/// Gradients are checked for non-finite entries before anything is touched,
/// so a failing step leaves parameters and state unchanged.
pub fn adam_step(
    params: &mut [NamedTensor],
    grads: &[Tensor],
    state: &mut AdamState,
    h: AdamHyper,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::Optimizer(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.tensor.shape() != g.shape() {
            return Err(TrainError::Optimizer(format!(
                "gradient shape {:?} for {} {:?}",
                g.shape(),
                p.name,
                p.tensor.shape()
            )));
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: p.name.clone(),
                step: state.t + 1,
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &gj)) in p.tensor.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= h.lr * m_hat / (v_hat.sqrt() + h.epsilon);
        }
    }
    Ok(())
}
