use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| v.max(T::zero())).collect();
    let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    Tensor::from_op(
        "relu",
        x.shape().to_vec(),
        data,
        &[x],
        Box::new(move |g| {
            vec![Some(
                g.iter()
                    .zip(&mask)
                    .map(|(&gi, &on)| if on { gi } else { T::zero() })
                    .collect(),
            )]
        }),
    )
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x
        .data()
        .iter()
        .map(|&v| {
            // branch keeps exp() from overflowing for large |v|
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
        .collect();
    let y = data.clone();
    Tensor::from_op(
        "sigmoid",
        x.shape().to_vec(),
        data,
        &[x],
        Box::new(move |g| {
            vec![Some(
                g.iter().zip(&y).map(|(&gi, &yi)| gi * yi * (T::one() - yi)).collect(),
            )]
        }),
    )
}

/// Softmax along `axis`, shifted by the per-slice maximum.
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.ndim() {
        return Err(Error::invalid(
            "softmax",
            format!("axis {axis} out of range for shape {:?}", x.shape()),
        ));
    }
    let shape = x.shape();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();

    let mut y = vec![T::zero(); x.numel()];
    {
        let xd = x.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let idx = |k: usize| base + k * inner;
                let max = (0..extent).map(|k| xd[idx(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..extent {
                    let e = (xd[idx(k)] - max).exp();
                    y[idx(k)] = e;
                    total = total + e;
                }
                for k in 0..extent {
                    y[idx(k)] = y[idx(k)] / total;
                }
            }
        }
    }
    let saved = y.clone();
    Ok(Tensor::from_op(
        "softmax",
        shape.to_vec(),
        y,
        &[x],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * extent * inner + i;
                    let dot: T = (0..extent).map(|k| g[base + k * inner] * saved[base + k * inner]).sum();
                    for k in 0..extent {
                        let j = base + k * inner;
                        dx[j] = saved[j] * (g[j] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}
