use super::{Element, Tensor};
use crate::error::{Error, Result};

/// For every element of `a_shape` (row-major), the offset of the element of
/// `b_shape` it pairs with. `b` must have the same rank as `a`, each extent
/// equal to `a`'s or 1. Returns `None` when the shapes are identical.
fn broadcast_offsets(op: &'static str, a_shape: &[usize], b_shape: &[usize]) -> Result<Option<Vec<usize>>> {
    if a_shape == b_shape {
        return Ok(None);
    }
    let compatible = a_shape.len() == b_shape.len() && a_shape.iter().zip(b_shape).all(|(&a, &b)| a == b || b == 1);
    if !compatible {
        return Err(Error::shape(op, a_shape, b_shape));
    }
    let rank = a_shape.len();
    let mut b_strides = vec![0usize; rank];
    let mut stride = 1;
    for axis in (0..rank).rev() {
        b_strides[axis] = if b_shape[axis] == 1 { 0 } else { stride };
        stride *= b_shape[axis];
    }
    let total: usize = a_shape.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut index = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        offsets.push(offset);
        for axis in (0..rank).rev() {
            index[axis] += 1;
            offset += b_strides[axis];
            if index[axis] < a_shape[axis] {
                break;
            }
            offset -= b_strides[axis] * index[axis];
            index[axis] = 0;
        }
    }
    Ok(Some(offsets))
}

/// Sums `g` (shaped like `a`) into a buffer shaped like `b`.
fn reduce_to<T: Element>(g: &[T], offsets: &Option<Vec<usize>>, b_len: usize) -> Vec<T> {
    match offsets {
        None => g.to_vec(),
        Some(offsets) => {
            let mut out = vec![T::zero(); b_len];
            for (&gi, &o) in g.iter().zip(offsets) {
                out[o] = out[o] + gi;
            }
            out
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<T: Element> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: Binary) -> Result<Tensor<T>> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let offsets = broadcast_offsets(name, self.shape(), other.shape())?;
        let data = {
            let a = self.data();
            let b = other.data();
            let f = |x: T, y: T| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            };
            match &offsets {
                None => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
                Some(off) => a.iter().zip(off).map(|(&x, &o)| f(x, b[o])).collect(),
            }
        };
        let b_len = other.numel();
        let backward: super::BackwardFn<T> = match kind {
            Binary::Add => Box::new(move |g| vec![Some(g.to_vec()), Some(reduce_to(g, &offsets, b_len))]),
            Binary::Sub => Box::new(move |g| {
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                vec![Some(g.to_vec()), Some(reduce_to(&neg, &offsets, b_len))]
            }),
            Binary::Mul => {
                let (lhs, rhs) = (self.clone(), other.clone());
                Box::new(move |g| {
                    let a = lhs.data();
                    let b = rhs.data();
                    let (ga, gb_full): (Vec<T>, Vec<T>) = match &offsets {
                        None => g
                            .iter()
                            .zip(a.iter().zip(b.iter()))
                            .map(|(&gi, (&x, &y))| (gi * y, gi * x))
                            .unzip(),
                        Some(off) => g
                            .iter()
                            .zip(a.iter().zip(off))
                            .map(|(&gi, (&x, &o))| (gi * b[o], gi * x))
                            .unzip(),
                    };
                    vec![Some(ga), Some(reduce_to(&gb_full, &offsets, b_len))]
                })
            }
        };
        Ok(Tensor::from_op(
            name,
            self.shape().to_vec(),
            data,
            &[self, other],
            backward,
        ))
    }

    /// Elementwise sum; `other` may broadcast along singleton extents.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Sub)
    }

    /// Elementwise product; `other` may broadcast along singleton extents.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn scale(&self, factor: f64) -> Tensor<T> {
        let k = T::from_f64_lossy(factor);
        let data = self.data().iter().map(|&v| v * k).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            &[self],
            Box::new(move |g| vec![Some(g.iter().map(|&v| v * k).collect())]),
        )
    }

    pub fn add_scalar(&self, value: f64) -> Tensor<T> {
        let k = T::from_f64_lossy(value);
        let data = self.data().iter().map(|&v| v + k).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            &[self],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    /// Sum of all elements as a single-element tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![total],
            &[self],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        self.sum().scale(1.0 / self.numel() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn add_pairs_elements() {
        let a = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().to_vec(), vec![4.0, 6.0]);
    }

    #[test]
    fn mul_by_channel_ones_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 3, 4, 5], &mut rng);
        let ones = Tensor::ones(&[1, 3, 1, 1]);
        assert_eq!(x.mul(&ones).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn incompatible_shapes_name_both() {
        let a = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let b = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 4, 4]") && err.contains("[1, 2, 1, 1]"), "{err}");
        // broadcasting only goes from rhs to lhs
        assert!(b.add(&a).is_err());
    }

    #[test]
    fn grad_of_sum_of_product_is_other_operand() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[2, 3], &mut rng).tracked();
        let b = random(&[2, 3], &mut rng);
        a.mul(&b).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), b.to_vec());
        let numeric = finite_diff_grad(|t| Ok(t.mul(&b)?.sum()), &a, 1e-4).unwrap();
        assert!(relative_error(&a.grad().unwrap(), &numeric.to_vec()) < 1e-4);
    }

    #[test]
    fn broadcast_backward_matches_explicit_tiling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 4, 4], &mut rng);
        for b_shape in [[1, 3, 1, 1], [2, 1, 4, 4], [1, 1, 1, 1]] {
            let w = random(&b_shape, &mut rng).tracked();
            x.mul(&w).unwrap().sum().backward().unwrap();
            let got = w.grad().unwrap();

            // reference: tile w to x's shape by hand, differentiate, then fold
            let tiled_data: Vec<f64> = {
                let wd = w.data();
                let mut out = Vec::with_capacity(x.numel());
                for n in 0..2 {
                    for c in 0..3 {
                        for p in 0..16 {
                            let idx = (if b_shape[0] == 1 { 0 } else { n }) * b_shape[1] * b_shape[2] * b_shape[3]
                                + (if b_shape[1] == 1 { 0 } else { c }) * b_shape[2] * b_shape[3]
                                + if b_shape[2] == 1 { 0 } else { p };
                            out.push(wd[idx]);
                        }
                    }
                }
                out
            };
            let tiled = Tensor::from_vec(x.shape(), tiled_data).unwrap().tracked();
            x.mul(&tiled).unwrap().sum().backward().unwrap();
            let tiled_grad = tiled.grad().unwrap();
            let mut folded = vec![0.0; w.numel()];
            for n in 0..2 {
                for c in 0..3 {
                    for p in 0..16 {
                        let idx = (if b_shape[0] == 1 { 0 } else { n }) * b_shape[1] * b_shape[2] * b_shape[3]
                            + (if b_shape[1] == 1 { 0 } else { c }) * b_shape[2] * b_shape[3]
                            + if b_shape[2] == 1 { 0 } else { p };
                        folded[idx] += tiled_grad[(n * 3 + c) * 16 + p];
                    }
                }
            }
            assert!(relative_error(&got, &folded) < 1e-12, "{b_shape:?}");
        }
    }

    #[test]
    fn reuse_accumulates_single_use_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[3, 3], &mut rng).tracked();
        let c1 = random(&[3, 3], &mut rng);
        let c2 = random(&[3, 3], &mut rng);
        x.mul(&c1)
            .unwrap()
            .add(&x.mul(&c2).unwrap())
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        let both = x.grad().unwrap();
        let expected: Vec<f64> = c1.to_vec().iter().zip(c2.to_vec()).map(|(a, b)| a + b).collect();
        assert!(relative_error(&both, &expected) < 1e-12);
    }

    #[test]
    fn sub_and_scale_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&[2, 2, 3, 3], &mut rng).tracked();
        let b = random(&[1, 2, 1, 3], &mut rng).tracked();
        let f = |a: &Tensor<f64>, b: &Tensor<f64>| -> Result<Tensor<f64>> {
            let d = a.sub(b)?;
            Ok(d.mul(&d)?.scale(0.5).add_scalar(1.0).mean())
        };
        f(&a, &b).unwrap().backward().unwrap();
        let na = finite_diff_grad(|t| f(t, &b.detach()), &a, 1e-4).unwrap();
        let nb = finite_diff_grad(|t| f(&a.detach(), t), &b, 1e-4).unwrap();
        assert!(relative_error(&a.grad().unwrap(), &na.to_vec()) < 1e-4);
        assert!(relative_error(&b.grad().unwrap(), &nb.to_vec()) < 1e-4);
    }
}
