use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// 2x2 max pooling with stride 2. Gradient goes to the first maximal
/// element of each window in row-major order.
pub fn maxpool2x2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("maxpool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(
            "maxpool2x2",
            format!("spatial extent {h}x{w} must be even"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    {
        let xd = x.data();
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let top = base + 2 * oy * w + 2 * ox;
                    let mut best = top;
                    for cand in [top + 1, top + w, top + w + 1] {
                        if xd[cand] > xd[best] {
                            best = cand;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
    }
    let len = x.numel();
    Ok(Tensor::from_op(
        "maxpool2x2",
        vec![n, c, ho, wo],
        out,
        &[x],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); len];
            for (&gi, &src) in g.iter().zip(&argmax) {
                dx[src] = dx[src] + gi;
            }
            vec![Some(dx)]
        }),
    ))
}

/// Per-channel spatial mean, `N x C x H x W -> N x C x 1 x 1`.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let plane = h * w;
    if plane == 0 {
        return Err(Error::invalid("global_avg_pool", "empty spatial extent"));
    }
    let inv = T::one() / T::from_usize(plane).unwrap();
    let out: Vec<T> = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Ok(Tensor::from_op(
        "global_avg_pool",
        vec![n, c, 1, 1],
        out,
        &[x],
        Box::new(move |g| {
            vec![Some(
                g.iter().flat_map(|&gi| std::iter::repeat_n(gi * inv, plane)).collect(),
            )]
        }),
    ))
}
