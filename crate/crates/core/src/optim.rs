//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn for_params<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        AdamState { step: 0, m, v }
    }
}

/// One Adam update of `params` in place. `grads[i] = None` leaves parameter
/// `i` and its moments untouched.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Option<Tensor>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let moments = state.m[i].data_mut().iter_mut().zip(state.v[i].data_mut().iter_mut());
        for ((pv, &gv), (mv, vv)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            *pv -= cfg.lr * (*mv / c1) / ((*vv / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Adam bound to every parameter of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            state: AdamState::for_params(store.params().iter().map(|p| &p.tensor)),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        let mut params: Vec<&mut Tensor> = store.params_mut().map(|p| &mut p.tensor).collect();
        adam_step(&mut params, grads, &mut self.state, &self.cfg)
    }

    pub fn round_to_f32(&mut self) {
        for t in self.state.m.iter_mut().chain(self.state.v.iter_mut()) {
            t.round_to_f32();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_run(w0: f64, steps: usize, lr: f64) -> Vec<f64> {
        let mut w = Tensor::from_vec(vec![w0]);
        let mut st = AdamState::for_params([&w]);
        let cfg = AdamConfig { lr, ..AdamConfig::default() };
        (0..steps)
            .map(|_| {
                let g = w.map(|v| 2.0 * v);
                adam_step(&mut [&mut w], &[Some(g)], &mut st, &cfg).unwrap();
                w.data()[0]
            })
            .collect()
    }

    #[test]
    fn two_step_trace_on_square() {
        // Reference values from an independent scalar implementation.
        let trace = scalar_run(1.0, 2, 0.1);
        assert!((trace[0] - 0.9000000005).abs() < 1e-15);
        assert!((trace[1] - 0.8004122286917928).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut w = Tensor::from_vec(vec![1.5, -2.0]);
        let mut st = AdamState::for_params([&w]);
        adam_step(&mut [&mut w], &[Some(Tensor::zeros(&[2]))], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(w.data(), &[1.5, -2.0]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut w = Tensor::from_vec(vec![1.0]);
        let mut st = AdamState::for_params([&w]);
        let r = adam_step(&mut [&mut w], &[Some(Tensor::zeros(&[2]))], &mut st, &AdamConfig::default());
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
