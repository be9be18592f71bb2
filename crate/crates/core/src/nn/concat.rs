use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Concatenates two `N x C x H x W` tensors along the channel axis.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape("concat_channels", a.shape(), b.shape()));
    }
    let (la, lb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(n * (la + lb));
    {
        let (ad, bd) = (a.data(), b.data());
        for i in 0..n {
            out.extend_from_slice(&ad[i * la..(i + 1) * la]);
            out.extend_from_slice(&bd[i * lb..(i + 1) * lb]);
        }
    }
    Ok(Tensor::from_op(
        "concat_channels",
        vec![n, ca + cb, h, w],
        out,
        &[a, b],
        Box::new(move |g| {
            let mut ga = Vec::with_capacity(n * la);
            let mut gb = Vec::with_capacity(n * lb);
            for chunk in g.chunks(la + lb) {
                ga.extend_from_slice(&chunk[..la]);
                gb.extend_from_slice(&chunk[la..]);
            }
            vec![Some(ga), Some(gb)]
        }),
    ))
}

/// Channels `start..start + len` of an `N x C x H x W` tensor.
pub fn narrow_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("narrow_channels")?;
    if start + len > c {
        return Err(Error::invalid(
            "narrow_channels",
            format!("channels {start}..{} out of range for {c}", start + len),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    {
        let xd = x.data();
        for i in 0..n {
            out.extend_from_slice(&xd[(i * c + start) * plane..(i * c + start + len) * plane]);
        }
    }
    let total = x.numel();
    Ok(Tensor::from_op(
        "narrow_channels",
        vec![n, len, h, w],
        out,
        &[x],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); total];
            for (i, chunk) in g.chunks(len * plane).enumerate() {
                dx[(i * c + start) * plane..(i * c + start + len) * plane].copy_from_slice(chunk);
            }
            vec![Some(dx)]
        }),
    ))
}
