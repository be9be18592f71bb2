use super::Sample;

/// Original extent of a padded sample, for cropping predictions back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OriginalSize {
    pub height: usize,
    pub width: usize,
}

/// Smallest multiple of `m` that is at least `v`.
pub fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m.max(1)) * m.max(1)
}

/// Mirror index without repeating the edge, periodic for pads longer than
/// the extent.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflect-pads each `h x w` plane of `data` on the right and bottom.
pub fn reflect_pad<T: Copy>(data: &[T], h: usize, w: usize, new_h: usize, new_w: usize) -> Vec<T> {
    assert!(new_h >= h && new_w >= w);
    let planes = data.len() / (h * w).max(1);
    let mut out = Vec::with_capacity(planes * new_h * new_w);
    for plane in data.chunks_exact(h * w) {
        for y in 0..new_h {
            let row = &plane[reflect(y, h) * w..][..w];
            out.extend((0..new_w).map(|x| row[reflect(x, w)]));
        }
    }
    out
}

/// Keeps the top-left `h x w` corner of each `padded_h x padded_w` plane.
pub fn crop<T: Copy>(data: &[T], padded_h: usize, padded_w: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len() / (padded_h * padded_w).max(1) * h * w);
    for plane in data.chunks_exact(padded_h * padded_w) {
        for y in 0..h {
            out.extend_from_slice(&plane[y * padded_w..][..w]);
        }
    }
    out
}

/// Reflect-pads image and mask to the next multiples of `m`.
pub fn pad_to_multiple(s: &Sample, m: usize) -> (Sample, OriginalSize) {
    let (h, w) = s.size();
    let (nh, nw) = (round_up(h, m), round_up(w, m));
    let orig = OriginalSize { height: h, width: w };
    if (nh, nw) == (h, w) {
        return (s.clone(), orig);
    }
    let padded = Sample {
        height: nh,
        width: nw,
        image: reflect_pad(&s.image, h, w, nh, nw),
        mask: reflect_pad(&s.mask, h, w, nh, nw),
        ..s.clone()
    };
    (padded, orig)
}
