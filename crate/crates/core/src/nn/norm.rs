use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::Mode;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

/// Learnable affine terms and running statistics of a 2-D batch norm.
///
/// Running statistics are plain (non-tracking) tensors so they can be
/// serialized alongside parameters.
#[derive(Clone, Debug)]
pub struct BatchNormState<T: Element = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Element> BatchNormState<T> {
    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]).tracked(),
            beta: Tensor::zeros(&[channels]).tracked(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

/// Per-channel normalization of an `N x C x H x W` tensor.
///
/// Training mode normalizes by the biased batch variance and moves the
/// running statistics towards the batch statistics
/// (`running <- (1 - m) running + m batch`, the variance term unbiased).
/// Inference mode uses only the running statistics.
pub fn batchnorm2d<T: Element>(x: &Tensor<T>, state: &BatchNormState<T>, mode: Mode) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("batchnorm2d")?;
    if state.channels() != c {
        return Err(Error::shape("batchnorm2d", x.shape(), state.gamma.shape()));
    }
    let plane = h * w;
    let count = n * plane;
    let eps = T::from_f64_lossy(state.epsilon);

    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::invalid(
                    "batchnorm2d",
                    format!(
                        "training mode needs at least 2 values per channel, got {count} for shape {:?}",
                        x.shape()
                    ),
                ));
            }
            let xd = x.data();
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let inv = T::one() / T::from_usize(count).unwrap();
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s = s + xd[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                }
                let mu = s * inv;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * plane..][..plane] {
                        sq = sq + (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = sq * inv;
            }
            drop(xd);
            let m = T::from_f64_lossy(state.momentum);
            let unbias = T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap();
            state.running_mean.update_data(|rm| {
                for (r, &b) in rm.iter_mut().zip(&mean) {
                    *r = (T::one() - m) * *r + m * b;
                }
            });
            state.running_var.update_data(|rv| {
                for (r, &b) in rv.iter_mut().zip(&var) {
                    *r = (T::one() - m) * *r + m * b * unbias;
                }
            });
            (mean, var)
        }
        Mode::Eval => (state.running_mean.to_vec(), state.running_var.to_vec()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gamma = state.gamma.to_vec();
    let beta = state.beta.to_vec();
    let mut xhat = vec![T::zero(); x.numel()];
    let mut out = vec![T::zero(); x.numel()];
    {
        let xd = x.data();
        for (i, ((xh, o), &v)) in xhat.iter_mut().zip(out.iter_mut()).zip(xd.iter()).enumerate() {
            let ch = (i / plane) % c;
            *xh = (v - mean[ch]) * inv_std[ch];
            *o = gamma[ch] * *xh + beta[ch];
        }
    }

    let backward = Box::new(move |g: &[T]| {
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (i, (&gi, &xh)) in g.iter().zip(&xhat).enumerate() {
            let ch = (i / plane) % c;
            dgamma[ch] = dgamma[ch] + gi * xh;
            dbeta[ch] = dbeta[ch] + gi;
        }
        let dx: Vec<T> = match mode {
            Mode::Eval => g
                .iter()
                .enumerate()
                .map(|(i, &gi)| {
                    let ch = (i / plane) % c;
                    gi * gamma[ch] * inv_std[ch]
                })
                .collect(),
            Mode::Train => {
                // dx = gamma inv_std / M (M g - sum g - xhat sum(g xhat))
                let m = T::from_usize(count).unwrap();
                g.iter()
                    .zip(&xhat)
                    .enumerate()
                    .map(|(i, (&gi, &xh))| {
                        let ch = (i / plane) % c;
                        gamma[ch] * inv_std[ch] / m * (m * gi - dbeta[ch] - xh * dgamma[ch])
                    })
                    .collect()
            }
        };
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    });
    Ok(Tensor::from_op(
        "batchnorm2d",
        x.shape().to_vec(),
        out,
        &[x, &state.gamma, &state.beta],
        backward,
    ))
}
