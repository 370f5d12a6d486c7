use serde::{Deserialize, Serialize};

use super::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Bias-corrected Adam update of one flat slice at step `t` (already incremented).
pub fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn adam_step(p: &mut NetworkParams, g: &NetworkParams, s: &mut AdamState) -> Result<()> {
    if p.dims() != g.dims() || p.dims() != s.m.dims() {
        return Err(Error::Shape(format!(
            "adam: params {:?}, grads {:?}, state {:?}",
            p.dims(),
            g.dims(),
            s.m.dims()
        )));
    }
    s.t += 1;
    let cfg = s.config;
    let t = s.t;
    let grads: Vec<&[f64]> = g.tensors().into_iter().map(|(_, _, v)| v).collect();
    let ms = s.m.tensors_mut();
    let vs = s.v.tensors_mut();
    for (((pt, gt), mt), vt) in p.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        adam_update_slice(pt, gt, mt, vt, t, &cfg);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, NetworkDims};

    fn scalar_steps(grads: &[f64]) -> Vec<f64> {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.5], [0.0], [0.0]);
        let mut updates = Vec::new();
        for (k, &g) in grads.iter().enumerate() {
            let before = p[0];
            adam_update_slice(&mut p, &[g], &mut m, &mut v, k as u64 + 1, &cfg);
            updates.push(p[0] - before);
        }
        updates
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        for g in [3.0, -0.02, 1e-3] {
            let u = scalar_steps(&[g])[0];
            assert!((u + 0.001 * f64::signum(g)).abs() < 1e-6, "g={g} update={u}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let u = scalar_steps(&[0.0; 5]);
        assert!(u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_gradient_does_not_grow_step() {
        let u = scalar_steps(&[0.7, 0.7]);
        assert!(u[1].abs() <= u[0].abs() + 1e-12);
    }

    #[test]
    fn network_step_updates_every_tensor_and_stays_finite() {
        let dims = NetworkDims::new(3, 2, 2);
        let mut p = init_params(1, dims).unwrap();
        let mut g = init_params(2, dims).unwrap();
        g.out_b = 0.3;
        let mut s = AdamState::new(&p, AdamConfig::default());
        let before = p.clone();
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(s.t, 1);
        assert!(p.is_finite());
        assert!(s.v.tensors().iter().all(|(_, _, v)| v.iter().all(|&x| x >= 0.0)));
        assert!((p.out_b - before.out_b + 0.001).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = init_params(1, NetworkDims::new(3, 2, 2)).unwrap();
        let g = init_params(1, NetworkDims::new(4, 2, 2)).unwrap();
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &g, &mut s).is_err());
    }
}
