use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

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

/// Moment buffers for a fixed, ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// One bias-corrected Adam update. Parameters are replaced in place; a
    /// non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, params: &mut [Tensor<T>], names: &[String], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("adam: learning rate {lr}")));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map(String::as_str).unwrap_or("?");
            if p.shape() != g.shape() || self.m[i].len() != p.numel() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    shapes: vec![p.shape().to_vec(), g.shape().to_vec()],
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(lr / c1);
        let inv_sqrt_c2 = T::from_f64_lossy(1.0 / c2.sqrt());
        let eps = T::from_f64_lossy(eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut data = p.to_vec();
            for (k, (&gk, pk)) in g.data().iter().zip(data.iter_mut()).enumerate() {
                m[k] = b1 * m[k] + ob1 * gk;
                v[k] = b2 * v[k] + ob2 * gk * gk;
                *pk -= step_size * m[k] / (v[k].sqrt() * inv_sqrt_c2 + eps);
            }
            *p = Tensor::from_parts(p.shape().to_vec(), data);
        }
        Ok(())
    }
}
