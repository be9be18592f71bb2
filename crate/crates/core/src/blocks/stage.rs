use rand::Rng;

use super::{join, ConvParams, DsConvUnit, Module, TensorRole};
use crate::error::Result;
use crate::nn::{bilinear_upsample_x2, maxpool2x2, relu, Mode};
use crate::tensor::{Element, Tensor};

/// A size-preserving 3x3 stage: a dense conv with bias followed by ReLU, or
/// its depthwise-separable replacement.
#[derive(Clone, Debug)]
pub enum ConvUnit<T: Element = f32> {
    Plain(ConvParams<T>),
    Separable(DsConvUnit<T>),
}

impl<T: Element> ConvUnit<T> {
    pub fn new(c_in: usize, c_out: usize, separable: bool, rng: &mut impl Rng) -> Self {
        if separable {
            ConvUnit::Separable(DsConvUnit::new(c_in, c_out, rng))
        } else {
            ConvUnit::Plain(ConvParams::dense(c_in, c_out, 3, true, rng))
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            ConvUnit::Plain(c) => c.in_channels(),
            ConvUnit::Separable(u) => u.in_channels(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            ConvUnit::Plain(c) => c.out_channels(),
            ConvUnit::Separable(u) => u.out_channels(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            ConvUnit::Plain(c) => Ok(relu(&c.forward(x)?)),
            ConvUnit::Separable(u) => u.forward(x, mode),
        }
    }
}

impl<T: Element> Module<T> for ConvUnit<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        match self {
            ConvUnit::Plain(c) => c.visit(prefix, f),
            ConvUnit::Separable(u) => u.visit(prefix, f),
        }
    }
}

/// Max-pool by 2, then two conv units.
#[derive(Clone, Debug)]
pub struct EncoderBlock<T: Element = f32> {
    pub conv1: ConvUnit<T>,
    pub conv2: ConvUnit<T>,
}

impl<T: Element> EncoderBlock<T> {
    pub fn new(c_in: usize, c_out: usize, separable: bool, rng: &mut impl Rng) -> Self {
        Self {
            conv1: ConvUnit::new(c_in, c_out, separable, rng),
            conv2: ConvUnit::new(c_out, c_out, separable, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let pooled = maxpool2x2(x)?;
        self.conv2.forward(&self.conv1.forward(&pooled, mode)?, mode)
    }
}

impl<T: Element> Module<T> for EncoderBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
}

/// Bilinear 2x upsampling, then one conv unit down to the next level's width.
#[derive(Clone, Debug)]
pub struct DecoderStep<T: Element = f32> {
    pub conv: ConvUnit<T>,
}

impl<T: Element> DecoderStep<T> {
    pub fn new(c_in: usize, c_out: usize, separable: bool, rng: &mut impl Rng) -> Self {
        Self {
            conv: ConvUnit::new(c_in, c_out, separable, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.conv.forward(&bilinear_upsample_x2(x)?, mode)
    }
}

impl<T: Element> Module<T> for DecoderStep<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }
}
