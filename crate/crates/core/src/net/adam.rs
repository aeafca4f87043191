//! Adam with standard bias correction.

use super::model::{Model, ParamGrads};
use super::tensor::Tensor;
use super::NetError;

#[derive(Debug, Clone)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second-moment estimates aligned with [`Model::trainable`] order.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let shapes: Vec<Vec<usize>> =
            model.trainable().iter().map(|(_, t)| t.shape().to_vec()).collect();
        Self {
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One deterministic Adam update over every trainable parameter.
pub fn adam_step(
    model: &mut Model,
    grads: &ParamGrads,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), NetError> {
    let params = model.trainable_mut();
    if params.len() != grads.entries.len() || params.len() != state.m.len() {
        return Err(NetError::ShapeMismatch(format!(
            "adam: {} params, {} gradients, {} moment slots",
            params.len(),
            grads.entries.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    for (i, (pref, tensor)) in params.into_iter().enumerate() {
        let (gref, g) = &grads.entries[i];
        if *gref != pref || g.shape() != tensor.shape() {
            return Err(NetError::ShapeMismatch(format!(
                "adam: gradient {gref} does not match parameter {pref}"
            )));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = tensor.data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}
