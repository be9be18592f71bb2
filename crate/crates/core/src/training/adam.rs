use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

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

/// Moment buffers, one per parameter, in the order of the parameter list
/// given to [`AdamState::new`].
#[derive(Clone, Debug)]
pub struct AdamState<T: Element = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[(String, Tensor<T>)]) -> Self {
        Self {
            config,
            step: 0,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            m: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// One bias-corrected update. The step counter is incremented first;
    /// nothing is modified if any parameter lacks a gradient.
    pub fn update(&mut self, params: &[(String, Tensor<T>)]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::invalid(
                "adam",
                format!("optimizer tracks {} parameters, got {}", self.m.len(), params.len()),
            ));
        }
        let mut grads = Vec::with_capacity(params.len());
        for ((name, p), m) in params.iter().zip(&self.m) {
            let g = p.grad().ok_or_else(|| Error::MissingGrad(name.clone()))?;
            if g.len() != m.len() {
                return Err(Error::invalid("adam", format!("{name} changed size")));
            }
            grads.push(g);
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, (_, p)) in params.iter().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            p.update_data(|theta| {
                for j in 0..theta.len() {
                    let gj = g[j].to_f64_lossy();
                    let mj = beta1 * m[j].to_f64_lossy() + (1.0 - beta1) * gj;
                    let vj = beta2 * v[j].to_f64_lossy() + (1.0 - beta2) * gj * gj;
                    m[j] = T::from_f64_lossy(mj);
                    v[j] = T::from_f64_lossy(vj);
                    let delta = lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
                    theta[j] = T::from_f64_lossy(theta[j].to_f64_lossy() - delta);
                }
            });
        }
        Ok(())
    }
}
