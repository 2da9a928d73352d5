//! Bias-corrected Adam over the model's parameter tensors.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DetGPModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradients for every learnable tensor of a [`DetGPModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub table: Array2<f64>,
    pub z: Array2<f64>,
    pub u: Array2<f64>,
    pub logits: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &DetGPModel) -> Self {
        Self {
            table: Array2::zeros(model.table.weights.dim()),
            z: Array2::zeros(model.inducing.z.dim()),
            u: Array2::zeros(model.inducing.u.dim()),
            logits: vec![0.0; model.hops.logits.len()],
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Moments {
    fn ensure(&mut self, len: usize) {
        if self.first.len() != len {
            self.first = vec![0.0; len];
            self.second = vec![0.0; len];
        }
    }
}

/// Moment accumulators for table, Z, U and hop logits, plus the step count.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    moments: [Moments; 4],
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

fn update(
    param: &mut [f64],
    grad: &[f64],
    mom: &mut Moments,
    lr: f64,
    step: u64,
    cfg: &AdamConfig,
) {
    mom.ensure(param.len());
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        let m = &mut mom.first[i];
        let v = &mut mom.second[i];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

fn check(name: &'static str, param: (usize, usize), grad: (usize, usize)) -> Result<()> {
    if param != grad {
        return Err(Error::dims(name, format!("{param:?}"), format!("{grad:?}")));
    }
    Ok(())
}

/// One Adam step. `Z` and `U` move with `lr · inducing_lr_scale`, the word
/// table and hop logits with `lr`.
pub fn adam_step(
    model: &mut DetGPModel,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    inducing_lr_scale: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    check("table gradient", model.table.weights.dim(), grads.table.dim())?;
    check("Z gradient", model.inducing.z.dim(), grads.z.dim())?;
    check("U gradient", model.inducing.u.dim(), grads.u.dim())?;
    check(
        "hop logit gradient",
        (model.hops.logits.len(), 1),
        (grads.logits.len(), 1),
    )?;
    state.step += 1;
    let t = state.step;
    let inducing_lr = lr * inducing_lr_scale;
    let [m_table, m_z, m_u, m_logits] = &mut state.moments;
    update(
        model.table.weights.as_slice_mut().expect("contiguous"),
        grads.table.as_standard_layout().as_slice().expect("contiguous"),
        m_table,
        lr,
        t,
        cfg,
    );
    update(
        model.inducing.z.as_slice_mut().expect("contiguous"),
        grads.z.as_standard_layout().as_slice().expect("contiguous"),
        m_z,
        inducing_lr,
        t,
        cfg,
    );
    update(
        model.inducing.u.as_slice_mut().expect("contiguous"),
        grads.u.as_standard_layout().as_slice().expect("contiguous"),
        m_u,
        inducing_lr,
        t,
        cfg,
    );
    update(&mut model.hops.logits, &grads.logits, m_logits, lr, t, cfg);
    Ok(())
}
