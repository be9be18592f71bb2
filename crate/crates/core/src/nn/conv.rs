//! 2-D convolution (cross-correlation, no kernel flip) via tiled im2col.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Upper bound on the number of scalars in one im2col tile.
const TILE_ELEMS: usize = 1 << 18;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn tile(&self) -> usize {
        (TILE_ELEMS / self.rows().max(1)).clamp(1, self.positions().max(1))
    }
}

pub(crate) fn output_extent(op: &'static str, input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::invalid(
            op,
            format!("kernel {k} larger than padded extent {padded}"),
        ));
    }
    if (padded - k) % stride != 0 {
        return Err(Error::invalid(
            op,
            format!("extent {input} with kernel {k}, pad {pad}, stride {stride} gives a non-integral output"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

/// Fills `cols` (`rows x len`, row-major) with the receptive fields of output
/// positions `start..start + len` of one image.
fn im2col<T: Element>(x: &[T], g: &Geometry, start: usize, len: usize, cols: &mut [T]) {
    let (k, h, w) = (g.k, g.h as isize, g.w as isize);
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * len..(row + 1) * len];
                let (mut oy, mut ox) = (start / g.w_out, start % g.w_out);
                for slot in dst.iter_mut() {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    *slot = if iy >= 0 && iy < h && ix >= 0 && ix < w {
                        plane[(iy * w + ix) as usize]
                    } else {
                        T::zero()
                    };
                    ox += 1;
                    if ox == g.w_out {
                        ox = 0;
                        oy += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the image gradient `dx` (inverse of `im2col`).
fn col2im<T: Element>(cols: &[T], g: &Geometry, start: usize, len: usize, dx: &mut [T]) {
    let (k, h, w) = (g.k, g.h as isize, g.w as isize);
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * len..(row + 1) * len];
                let (mut oy, mut ox) = (start / g.w_out, start % g.w_out);
                for &v in src {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if iy >= 0 && iy < h && ix >= 0 && ix < w {
                        let p = &mut plane[(iy * w + ix) as usize];
                        *p = *p + v;
                    }
                    ox += 1;
                    if ox == g.w_out {
                        ox = 0;
                        oy += 1;
                    }
                }
            }
        }
    }
}

/// Standard dense convolution.
///
/// `x` is `N x C_in x H x W`, `weight` is `C_out x C_in x k x k`, `bias`
/// (optional) has `C_out` elements. Output extent per axis is
/// `(H + 2 pad - k) / stride + 1`, which must be integral.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, c_in, h, w) = x.dims4("conv2d")?;
    let (c_out, wc_in, kh, kw) = weight.dims4("conv2d")?;
    if wc_in != c_in {
        return Err(Error::shape("conv2d", x.shape(), weight.shape()));
    }
    if kh != kw {
        return Err(Error::invalid("conv2d", "only square kernels are supported"));
    }
    if let Some(b) = bias {
        if b.numel() != c_out {
            return Err(Error::shape("conv2d", weight.shape(), b.shape()));
        }
    }
    let g = Geometry {
        c_in,
        h,
        w,
        k: kh,
        stride,
        pad,
        h_out: output_extent("conv2d", h, kh, stride, pad)?,
        w_out: output_extent("conv2d", w, kw, stride, pad)?,
    };
    let (rows, positions, tile) = (g.rows(), g.positions(), g.tile());
    let in_len = c_in * h * w;
    let out_len = c_out * positions;

    let mut out = vec![T::zero(); n * out_len];
    {
        let xd = x.data();
        let wd = weight.data();
        let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * tile }];
        for b in 0..n {
            let xb = &xd[b * in_len..(b + 1) * in_len];
            let ob = &mut out[b * out_len..(b + 1) * out_len];
            if g.is_pointwise() {
                T::gemm(
                    c_out,
                    rows,
                    positions,
                    &wd,
                    (rows, 1),
                    xb,
                    (positions, 1),
                    ob,
                    (positions, 1),
                    false,
                );
                continue;
            }
            let mut start = 0;
            while start < positions {
                let len = tile.min(positions - start);
                im2col(xb, &g, start, len, &mut cols[..rows * len]);
                T::gemm(
                    c_out,
                    rows,
                    len,
                    &wd,
                    (rows, 1),
                    &cols[..rows * len],
                    (len, 1),
                    &mut ob[start..],
                    (positions, 1),
                    false,
                );
                start += len;
            }
        }
        if let Some(bias) = bias {
            let bd = bias.data();
            // planes cycle through output channels
            for (i, plane) in out.chunks_mut(positions).enumerate() {
                let bv = bd[i % c_out];
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }

    let (xs, ws) = (x.clone(), weight.clone());
    let has_bias = bias.is_some();
    let backward = Box::new(move |grad: &[T]| {
        let xd = xs.data();
        let wd = ws.data();
        let mut dx = vec![T::zero(); n * in_len];
        let mut dw = vec![T::zero(); c_out * rows];
        let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * tile }];
        let mut dcols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * tile }];
        for b in 0..n {
            let xb = &xd[b * in_len..(b + 1) * in_len];
            let gb = &grad[b * out_len..(b + 1) * out_len];
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                // dW += G * X^T ; dX = W^T * G
                T::gemm(
                    c_out,
                    positions,
                    rows,
                    gb,
                    (positions, 1),
                    xb,
                    (1, positions),
                    &mut dw,
                    (rows, 1),
                    true,
                );
                T::gemm(
                    rows,
                    c_out,
                    positions,
                    &wd,
                    (1, rows),
                    gb,
                    (positions, 1),
                    dxb,
                    (positions, 1),
                    false,
                );
                continue;
            }
            let mut start = 0;
            while start < positions {
                let len = tile.min(positions - start);
                let cols = &mut cols[..rows * len];
                let dcols = &mut dcols[..rows * len];
                im2col(xb, &g, start, len, cols);
                T::gemm(
                    c_out,
                    len,
                    rows,
                    &gb[start..],
                    (positions, 1),
                    cols,
                    (1, len),
                    &mut dw,
                    (rows, 1),
                    true,
                );
                T::gemm(
                    rows,
                    c_out,
                    len,
                    &wd,
                    (1, rows),
                    &gb[start..],
                    (positions, 1),
                    dcols,
                    (len, 1),
                    false,
                );
                col2im(dcols, &g, start, len, dxb);
                start += len;
            }
        }
        let db = has_bias.then(|| {
            let mut db = vec![T::zero(); c_out];
            for (i, plane) in grad.chunks(positions).enumerate() {
                db[i % c_out] = db[i % c_out] + plane.iter().copied().sum::<T>();
            }
            db
        });
        vec![Some(dx), Some(dw), db]
    });

    let shape = vec![n, c_out, g.h_out, g.w_out];
    match bias {
        Some(b) => Ok(Tensor::from_op("conv2d", shape, out, &[x, weight, b], backward)),
        None => Ok(Tensor::from_op(
            "conv2d",
            shape,
            out,
            &[x, weight],
            Box::new(move |grad| {
                let mut grads = backward(grad);
                grads.truncate(2);
                grads
            }),
        )),
    }
}

/// Per-channel convolution: `weight` is `C x 1 x k x k`, stride 1, and
/// output channel `c` depends only on input channel `c`.
pub fn depthwise_conv2d<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("depthwise_conv2d")?;
    let (wc, one, k, kw) = weight.dims4("depthwise_conv2d")?;
    if wc != c || one != 1 || k != kw {
        return Err(Error::shape("depthwise_conv2d", x.shape(), weight.shape()));
    }
    let h_out = output_extent("depthwise_conv2d", h, k, 1, pad)?;
    let w_out = output_extent("depthwise_conv2d", w, k, 1, pad)?;

    // For kernel offset `kk`, output indices `o` whose input `o + kk - pad` is in range.
    let valid = move |kk: usize, extent: usize, out_extent: usize| -> (usize, usize) {
        let lo = pad.saturating_sub(kk);
        let hi = (extent + pad).saturating_sub(kk).min(out_extent);
        (lo, hi.max(lo))
    };

    let mut out = vec![T::zero(); n * c * h_out * w_out];
    {
        let xd = x.data();
        let wd = weight.data();
        for (plane_idx, (xo, oo)) in xd.chunks(h * w).zip(out.chunks_mut(h_out * w_out)).enumerate() {
            let kern = &wd[(plane_idx % c) * k * k..(plane_idx % c + 1) * k * k];
            for ky in 0..k {
                let (y0, y1) = valid(ky, h, h_out);
                for kx in 0..k {
                    let wv = kern[ky * k + kx];
                    let (x0, x1) = valid(kx, w, w_out);
                    for oy in y0..y1 {
                        let iy = oy + ky - pad;
                        let src = &xo[iy * w + x0 + kx - pad..iy * w + x1 + kx - pad];
                        let dst = &mut oo[oy * w_out + x0..oy * w_out + x1];
                        dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + wv * s);
                    }
                }
            }
        }
    }

    let (xs, ws) = (x.clone(), weight.clone());
    let backward = Box::new(move |grad: &[T]| {
        let xd = xs.data();
        let wd = ws.data();
        let mut dx = vec![T::zero(); n * c * h * w];
        let mut dw = vec![T::zero(); c * k * k];
        for (plane_idx, ((xo, go), dxo)) in xd
            .chunks(h * w)
            .zip(grad.chunks(h_out * w_out))
            .zip(dx.chunks_mut(h * w))
            .enumerate()
        {
            let ch = plane_idx % c;
            for ky in 0..k {
                let (y0, y1) = valid(ky, h, h_out);
                for kx in 0..k {
                    let wv = wd[ch * k * k + ky * k + kx];
                    let (x0, x1) = valid(kx, w, w_out);
                    let mut acc = T::zero();
                    for oy in y0..y1 {
                        let iy = oy + ky - pad;
                        let row = iy * w + x0 + kx - pad;
                        let gs = &go[oy * w_out + x0..oy * w_out + x1];
                        let xrow = &xo[row..row + (x1 - x0)];
                        let dxrow = &mut dxo[row..row + (x1 - x0)];
                        for ((&gv, &xv), d) in gs.iter().zip(xrow).zip(dxrow) {
                            acc = acc + gv * xv;
                            *d = *d + gv * wv;
                        }
                    }
                    dw[ch * k * k + ky * k + kx] = dw[ch * k * k + ky * k + kx] + acc;
                }
            }
        }
        vec![Some(dx), Some(dw)]
    });
    Ok(Tensor::from_op(
        "depthwise_conv2d",
        vec![n, c, h_out, w_out],
        out,
        &[x, weight],
        backward,
    ))
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

    /// Direct six-loop convolution used as a reference.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Vec<f64> {
        let (n, ci, h, wd) = x.dims4("t").unwrap();
        let (co, _, k, _) = w.dims4("t").unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let (xv, wv) = (x.to_vec(), w.to_vec());
        let bv = b.map(|b| b.to_vec());
        let mut out = vec![0.0; n * co * ho * wo];
        for b_ in 0..n {
            for o in 0..co {
                for y in 0..ho {
                    for xx in 0..wo {
                        let mut acc = bv.as_ref().map_or(0.0, |bv| bv[o]);
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * stride + ky) as isize - pad as isize;
                                    let ix = (xx * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += wv[((o * ci + c) * k + ky) * k + kx]
                                            * xv[((b_ * ci + c) * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        out[((b_ * co + o) * ho + y) * wo + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_counts_overlaps() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.to_vec(), vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn pointwise_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[2, 1, 3, 5], &mut rng);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        for (yv, xv) in y.to_vec().iter().zip(x.to_vec()) {
            assert_eq!(*yv, 2.0 * xv + 1.0);
        }
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for (shape, co, k, stride, pad) in [
            ([2, 3, 5, 7], 4, 3, 1, 1),
            ([1, 2, 7, 5], 3, 3, 2, 1),
            ([1, 4, 4, 4], 2, 1, 1, 0),
            ([1, 2, 5, 5], 2, 3, 1, 0),
        ] {
            let x = random(&shape, &mut rng);
            let w = random(&[co, shape[1], k, k], &mut rng);
            let b = random(&[co], &mut rng);
            let y = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
            assert!(relative_error(&y.to_vec(), &naive_conv(&x, &w, Some(&b), stride, pad)) < 1e-14);
        }
    }

    #[test]
    fn tiled_path_matches_reference() {
        // enough rows and positions to force several tiles
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[1, 300, 32, 32], &mut rng);
        let w = random(&[2, 300, 3, 3], &mut rng);
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert!(relative_error(&y.to_vec(), &naive_conv(&x, &w, None, 1, 1)) < 1e-13);
    }

    #[test]
    fn channel_mismatch_and_bad_extent() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &w, None, 1, 1), Err(Error::ShapeMismatch { .. })));
        let w = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&x, &w, None, 2, 0).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (size, stride, pad, k) in [(4, 1, 1, 3), (4, 1, 0, 1), (5, 2, 1, 3)] {
            let x = random(&[1, 2, size, size], &mut rng).tracked();
            let w = random(&[3, 2, k, k], &mut rng).tracked();
            let b = random(&[3], &mut rng).tracked();
            let out = (size + 2 * pad - k) / stride + 1;
            let proj = random(&[1, 3, out, out], &mut rng);
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> Result<Tensor<f64>> {
                Ok(conv2d(x, w, Some(b), stride, pad)?.mul(&proj)?.sum())
            };
            loss(&x, &w, &b).unwrap().backward().unwrap();
            let nx = finite_diff_grad(|t| loss(t, &w, &b), &x, 1e-4).unwrap();
            let nw = finite_diff_grad(|t| loss(&x, t, &b), &w, 1e-4).unwrap();
            let nb = finite_diff_grad(|t| loss(&x, &w, t), &b, 1e-4).unwrap();
            assert!(relative_error(&x.grad().unwrap(), &nx.to_vec()) < 1e-4);
            assert!(relative_error(&w.grad().unwrap(), &nw.to_vec()) < 1e-4);
            assert!(relative_error(&b.grad().unwrap(), &nb.to_vec()) < 1e-4);
        }
    }

    #[test]
    fn delta_kernel_is_identity_and_conv_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(&[1, 2, 5, 5], &mut rng);
        let mut delta = vec![0.0; 2 * 2 * 9];
        delta[4] = 1.0; // out 0 <- in 0
        delta[(2 + 1) * 9 + 4] = 1.0; // out 1 <- in 1
        let d = Tensor::from_vec(&[2, 2, 3, 3], delta).unwrap();
        assert_eq!(conv2d(&x, &d, None, 1, 1).unwrap().to_vec(), x.to_vec());

        let y = random(&[1, 2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let lhs = conv2d(&x.scale(2.0).add(&y.scale(-3.0)).unwrap(), &w, None, 1, 1).unwrap();
        let rhs = conv2d(&x, &w, None, 1, 1)
            .unwrap()
            .scale(2.0)
            .add(&conv2d(&y, &w, None, 1, 1).unwrap().scale(-3.0))
            .unwrap();
        assert!(relative_error(&lhs.to_vec(), &rhs.to_vec()) < 1e-14);
    }

    #[test]
    fn depthwise_isolates_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random(&[1, 2, 4, 4], &mut rng);
        let mut wv = vec![1.0; 9];
        wv.extend([0.0; 9]);
        let w = Tensor::from_vec(&[2, 1, 3, 3], wv).unwrap();
        let y = depthwise_conv2d(&x, &w, 1).unwrap().to_vec();
        assert!(y[16..].iter().all(|&v| v == 0.0));

        // perturbing channel 0 leaves channel 1 untouched
        let w = random(&[2, 1, 3, 3], &mut rng);
        let before = depthwise_conv2d(&x, &w, 1).unwrap().to_vec();
        let mut xv = x.to_vec();
        xv[5] += 1.0;
        let after = depthwise_conv2d(&Tensor::from_vec(&[1, 2, 4, 4], xv).unwrap(), &w, 1)
            .unwrap()
            .to_vec();
        assert_eq!(before[16..], after[16..]);
        assert_ne!(before[..16], after[..16]);
    }

    #[test]
    fn depthwise_delta_is_identity_and_matches_grouped_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random(&[2, 3, 5, 4], &mut rng);
        let mut delta = vec![0.0; 27];
        for c in 0..3 {
            delta[c * 9 + 4] = 1.0;
        }
        let d = Tensor::from_vec(&[3, 1, 3, 3], delta).unwrap();
        assert_eq!(depthwise_conv2d(&x, &d, 1).unwrap().to_vec(), x.to_vec());

        // same as a dense conv whose off-diagonal channel blocks are zero
        let w = random(&[3, 1, 3, 3], &mut rng);
        let mut dense = vec![0.0; 3 * 3 * 9];
        for c in 0..3 {
            dense[(c * 3 + c) * 9..(c * 3 + c + 1) * 9].copy_from_slice(&w.to_vec()[c * 9..(c + 1) * 9]);
        }
        let dense = Tensor::from_vec(&[3, 3, 3, 3], dense).unwrap();
        let got = depthwise_conv2d(&x, &w, 1).unwrap().to_vec();
        assert!(relative_error(&got, &naive_conv(&x, &dense, None, 1, 1)) < 1e-14);
    }

    #[test]
    fn depthwise_weight_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[3, 1, 3, 3]);
        assert!(depthwise_conv2d(&x, &w, 1).is_err());
    }

    #[test]
    fn depthwise_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random(&[2, 2, 4, 4], &mut rng).tracked();
        let w = random(&[2, 1, 3, 3], &mut rng).tracked();
        let proj = random(&[2, 2, 4, 4], &mut rng);
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>| Ok(depthwise_conv2d(x, w, 1)?.mul(&proj)?.sum());
        loss(&x, &w).unwrap().backward().unwrap();
        let nx = finite_diff_grad(|t| loss(t, &w), &x, 1e-4).unwrap();
        let nw = finite_diff_grad(|t| loss(&x, t), &w, 1e-4).unwrap();
        assert!(relative_error(&x.grad().unwrap(), &nx.to_vec()) < 1e-4);
        assert!(relative_error(&w.grad().unwrap(), &nw.to_vec()) < 1e-4);
    }
}
