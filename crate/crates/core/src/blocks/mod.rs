//! Composite building blocks of the segmentation network.
//!
//! Every block owns its tensors and exposes them through [`Module::visit`]
//! with stable dotted names (`conv_p.weight`, `unit1.bn2.running_var`, ...).

mod attention;
mod ds_conv;
mod residual;
mod stage;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::nn::{conv2d, depthwise_conv2d};
use crate::tensor::{Element, Tensor};

pub use attention::HybridAttentionBlock;
pub use ds_conv::DsConvUnit;
pub use residual::ResidualBlock;
pub use stage::{ConvUnit, DecoderStep, EncoderBlock};

/// Whether a visited tensor is learnable or a running statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Param,
    Buffer,
}

pub trait Module<T: Element> {
    /// Calls `f` with the fully qualified name of every tensor the module owns.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole));

    fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor<T>, TensorRole)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, t, role| {
            out.push((name.to_string(), t.clone(), role))
        });
        out
    }

    fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit("", &mut |_, t, role| {
            if role == TensorRole::Param {
                count += t.numel();
            }
        });
        count
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Convolution weights. A depthwise layer has weight `C x 1 x k x k` and no
/// bias; a dense layer has `C_out x C_in x k x k` and an optional bias.
#[derive(Clone, Debug)]
pub struct ConvParams<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
    pub depthwise: bool,
}

/// Kaiming-normal sample for a layer with the given fan-in.
fn kaiming<T: Element>(len: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..len).map(|_| T::from_f64_lossy(normal.sample(rng))).collect()
}

impl<T: Element> ConvParams<T> {
    /// Dense `k x k` convolution, stride 1, size-preserving padding.
    pub fn dense(c_in: usize, c_out: usize, k: usize, bias: bool, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let fan_in = c_in * k * k;
        Self {
            weight: Tensor::param(&[c_out, c_in, k, k], kaiming(c_out * fan_in, fan_in, rng))
                .expect("consistent shape"),
            bias: bias.then(|| Tensor::zeros(&[c_out]).tracked()),
            stride: 1,
            padding: (k - 1) / 2,
            depthwise: false,
        }
    }

    /// Per-channel `k x k` convolution without bias.
    pub fn depthwise(channels: usize, k: usize, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        Self {
            weight: Tensor::param(&[channels, 1, k, k], kaiming(channels * k * k, k * k, rng))
                .expect("consistent shape"),
            bias: None,
            stride: 1,
            padding: (k - 1) / 2,
            depthwise: true,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn in_channels(&self) -> usize {
        if self.depthwise {
            self.weight.dim(0)
        } else {
            self.weight.dim(1)
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.depthwise {
            depthwise_conv2d(x, &self.weight, self.padding)
        } else {
            conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
        }
    }
}

impl<T: Element> Module<T> for ConvParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &self.weight, TensorRole::Param);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, TensorRole::Param);
        }
    }
}

impl<T: Element> Module<T> for crate::nn::BatchNormState<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        f(&join(prefix, "gamma"), &self.gamma, TensorRole::Param);
        f(&join(prefix, "beta"), &self.beta, TensorRole::Param);
        f(&join(prefix, "running_mean"), &self.running_mean, TensorRole::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, TensorRole::Buffer);
    }
}
