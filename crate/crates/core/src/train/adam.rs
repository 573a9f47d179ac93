//! Bias-corrected Adam.

use std::collections::BTreeMap;

use crate::diff::{ParamStore, Tensor};

/// First/second moment estimates plus the shared step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState::default()
    }
}

/// One Adam update over every parameter with a gradient entry. Parameters
/// are visited in name order; missing gradients leave the parameter (and its
/// moments) untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (name, theta) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        debug_assert_eq!(g.shape(), theta.shape(), "gradient shape for {name}");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(theta.shape().to_vec()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(theta.shape().to_vec()));
        let td = theta.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        let gd = g.data();
        for i in 0..td.len() {
            md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            td[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}
