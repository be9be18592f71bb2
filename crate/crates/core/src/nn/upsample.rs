use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Source taps for one output axis of a 2x half-pixel-center resize:
/// output `i` samples `max(0, (i + 0.5) / 2 - 0.5)`.
fn taps<T: Element>(extent: usize) -> Vec<(usize, usize, T)> {
    (0..2 * extent)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(extent - 1);
            let hi = (lo + 1).min(extent - 1);
            (lo, hi, T::from_f64_lossy(src - lo as f64))
        })
        .collect()
}

/// Bilinear 2x upsampling, `N x C x H x W -> N x C x 2H x 2W`.
pub fn bilinear_upsample_x2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("bilinear_upsample_x2")?;
    if h == 0 || w == 0 {
        return Err(crate::Error::invalid("bilinear_upsample_x2", "empty spatial extent"));
    }
    let (ho, wo) = (2 * h, 2 * w);
    let ys = taps::<T>(h);
    let xs = taps::<T>(w);
    let one = T::one();

    let mut out = vec![T::zero(); n * c * ho * wo];
    {
        let xd = x.data();
        for (src, dst) in xd.chunks(h * w).zip(out.chunks_mut(ho * wo)) {
            for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                let (r0, r1) = (&src[y0 * w..][..w], &src[y1 * w..][..w]);
                for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                    let top = (one - lx) * r0[x0] + lx * r0[x1];
                    let bottom = (one - lx) * r1[x0] + lx * r1[x1];
                    dst[oy * wo + ox] = (one - ly) * top + ly * bottom;
                }
            }
        }
    }
    let len = x.numel();
    Ok(Tensor::from_op(
        "bilinear_upsample_x2",
        vec![n, c, ho, wo],
        out,
        &[x],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); len];
            for (gp, dp) in g.chunks(ho * wo).zip(dx.chunks_mut(h * w)) {
                for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                        let gv = gp[oy * wo + ox];
                        let (gt, gb) = ((one - ly) * gv, ly * gv);
                        dp[y0 * w + x0] = dp[y0 * w + x0] + (one - lx) * gt;
                        dp[y0 * w + x1] = dp[y0 * w + x1] + lx * gt;
                        dp[y1 * w + x0] = dp[y1 * w + x0] + (one - lx) * gb;
                        dp[y1 * w + x1] = dp[y1 * w + x1] + lx * gb;
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}
