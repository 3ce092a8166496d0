use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter accepted by `trainable`,
/// using the gradients currently held in the store. Moments live in the store.
pub fn adam_step(
    store: &mut ParamStore,
    cfg: &AdamConfig,
    trainable: impl Fn(&str) -> bool,
) -> Result<()> {
    let names: Vec<String> = store
        .names()
        .filter(|n| trainable(n))
        .map(str::to_string)
        .collect();
    for n in &names {
        if !store.grads().contains_key(n) {
            return Err(NumError::MissingGradient(n.clone()));
        }
    }
    store.adam.step += 1;
    let t = store.adam.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for name in names {
        let g = store.grads()[&name].clone();
        let shape = g.shape().to_vec();
        let m = store
            .adam
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(shape.clone()));
        for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let m = m.clone();
        let v = store
            .adam
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(shape));
        for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let v = v.clone();
        let p = store.get_mut(&name)?;
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *pi -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
