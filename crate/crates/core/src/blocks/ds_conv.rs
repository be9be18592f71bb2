use rand::Rng;

use super::{join, ConvParams, Module, TensorRole};
use crate::error::{Error, Result};
use crate::nn::{batchnorm2d, relu, BatchNormState, Mode};
use crate::tensor::{Element, Tensor};

/// Depthwise-separable replacement for a 3x3 convolution:
/// `ReLU(BN(PW(ReLU(BN(DW(x))))))`.
#[derive(Clone, Debug)]
pub struct DsConvUnit<T: Element = f32> {
    pub depthwise: ConvParams<T>,
    pub bn1: BatchNormState<T>,
    pub pointwise: ConvParams<T>,
    pub bn2: BatchNormState<T>,
}

impl<T: Element> DsConvUnit<T> {
    pub fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            depthwise: ConvParams::depthwise(c_in, 3, rng),
            bn1: BatchNormState::new(c_in),
            pointwise: ConvParams::dense(c_in, c_out, 1, false, rng),
            bn2: BatchNormState::new(c_out),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.depthwise.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.out_channels()
    }

    /// Convolution weights only, `9 C_in + C_in C_out`.
    pub fn conv_weight_count(&self) -> usize {
        self.depthwise.weight.numel() + self.pointwise.weight.numel()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.ndim() == 4 && x.dim(1) != self.in_channels() {
            return Err(Error::shape("ds_conv", x.shape(), self.depthwise.weight.shape()));
        }
        let h = relu(&batchnorm2d(&self.depthwise.forward(x)?, &self.bn1, mode)?);
        Ok(relu(&batchnorm2d(&self.pointwise.forward(&h)?, &self.bn2, mode)?))
    }
}

impl<T: Element> Module<T> for DsConvUnit<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.depthwise.visit(&join(prefix, "dw"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.pointwise.visit(&join(prefix, "pw"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
    }
}
