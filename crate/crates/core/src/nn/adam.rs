use serde::{Deserialize, Serialize};

use super::{Param, Real};
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
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam with bias correction over the trainable entries of a parameter list.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Param<T>]) -> Result<Self> {
        config.validate()?;
        let zeros = || -> Vec<Vec<T>> {
            params
                .iter()
                .map(|p| if p.trainable { vec![T::zero(); p.data.len()] } else { Vec::new() })
                .collect()
        };
        Ok(Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn step(&mut self, params: &mut [Param<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                format!("{} parameter tensors", self.m.len()),
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = T::from_f64(c.lr / bc1);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
        let eps = T::from_f64(c.eps);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = &grads[i];
            if g.len() != p.data.len() {
                return Err(Error::shape(format!("{} gradient of {}", p.name, p.data.len()), g.len().to_string()));
            }
            let len = p.data.len();
            let (x, m, v) = (&mut p.data[..len], &mut self.m[i][..len], &mut self.v[i][..len]);
            let g = &g[..len];
            for k in 0..len {
                m[k] = b1 * m[k] + one_b1 * g[k];
                v[k] = b2 * v[k] + one_b2 * g[k] * g[k];
                x[k] = x[k] - step_size * m[k] / (v[k].sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
