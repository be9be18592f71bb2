use rand::Rng;

use super::{join, DsConvUnit, Module, TensorRole};
use crate::error::Result;
use crate::nn::Mode;
use crate::tensor::{Element, Tensor};

/// `x + unit2(unit1(x))` with both units at constant width.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T: Element = f32> {
    pub unit1: DsConvUnit<T>,
    pub unit2: DsConvUnit<T>,
}

impl<T: Element> ResidualBlock<T> {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            unit1: DsConvUnit::new(channels, channels, rng),
            unit2: DsConvUnit::new(channels, channels, rng),
        }
    }

    pub fn body(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.unit2.forward(&self.unit1.forward(x, mode)?, mode)
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        x.add(&self.body(x, mode)?)
    }
}

impl<T: Element> Module<T> for ResidualBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, TensorRole)) {
        self.unit1.visit(&join(prefix, "unit1"), f);
        self.unit2.visit(&join(prefix, "unit2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::testing::{random, randomize, rng, zero_weights};
    use crate::tensor::{finite_diff_grad, relative_error};

    #[test]
    fn zero_body_is_exact_identity() {
        let mut r = rng(10);
        let block = ResidualBlock::<f32>::new(4, &mut r);
        zero_weights(&block);
        let x = random(&[2, 4, 4, 4], &mut r).cast::<f32>().tracked();
        for mode in [Mode::Train, Mode::Eval] {
            let y = block.forward(&x, mode).unwrap();
            assert_eq!(y.to_vec(), x.to_vec());
        }
        x.zero_grad();
        block.forward(&x, Mode::Train).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; x.numel()]);
    }

    #[test]
    fn output_minus_body_is_input() {
        let mut r = rng(11);
        let block = ResidualBlock::<f64>::new(3, &mut r);
        let x = random(&[1, 3, 4, 4], &mut r);
        let y = block.forward(&x, Mode::Eval).unwrap();
        let diff = y.sub(&block.body(&x, Mode::Eval).unwrap()).unwrap();
        assert!(relative_error(&diff.to_vec(), &x.to_vec()) < 1e-15);
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(12);
        let block = ResidualBlock::<f64>::new(2, &mut r);
        randomize(&block, &mut r);
        let x = random(&[2, 2, 4, 4], &mut r).tracked();
        let proj = random(&[2, 2, 4, 4], &mut r);
        let f = |x: &Tensor<f64>| Ok(block.forward(x, Mode::Train)?.mul(&proj)?.sum());
        f(&x).unwrap().backward().unwrap();
        let num = finite_diff_grad(f, &x, 1e-4).unwrap();
        assert!(relative_error(&x.grad().unwrap(), &num.to_vec()) < 1e-4);
    }
}
