use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;

pub const CONTRAST_RANGE: (f32, f32) = (0.8, 1.2);
pub const BRIGHTNESS_RANGE: (f32, f32) = (-0.1, 0.1);

/// One concrete draw of the augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotate180: bool,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Contrast factor around the image mean.
    pub alpha: f32,
    /// Brightness offset.
    pub beta: f32,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        rotate180: false,
        flip_horizontal: false,
        flip_vertical: false,
        alpha: 1.0,
        beta: 0.0,
    };

    pub fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            rotate180: rng.random_bool(0.5),
            flip_horizontal: rng.random_bool(0.5),
            flip_vertical: rng.random_bool(0.5),
            alpha: rng.random_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1),
            beta: rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1),
        }
    }
}

/// Random rotate-180 / flips on image and mask, brightness/contrast jitter
/// on the image only. Fully determined by `seed`.
pub fn augment(s: &Sample, seed: u64) -> Sample {
    apply(s, &AugmentParams::draw(seed))
}

pub fn apply(s: &Sample, p: &AugmentParams) -> Sample {
    let (h, w) = s.size();
    // rotate-180 is both flips; compose into one index map
    let flip_x = p.flip_horizontal ^ p.rotate180;
    let flip_y = p.flip_vertical ^ p.rotate180;
    let mut out = s.clone();
    if flip_x || flip_y {
        for plane in out.image.chunks_exact_mut(h * w) {
            remap(plane, h, w, flip_x, flip_y);
        }
        remap(&mut out.mask, h, w, flip_x, flip_y);
    }
    if p.alpha != 1.0 || p.beta != 0.0 {
        let mean = (out.image.iter().map(|&v| f64::from(v)).sum::<f64>() / out.image.len().max(1) as f64) as f32;
        for v in &mut out.image {
            *v = (p.alpha * (*v - mean) + mean + p.beta).clamp(0.0, 1.0);
        }
    }
    out
}

fn remap<T: Copy>(plane: &mut [T], h: usize, w: usize, flip_x: bool, flip_y: bool) {
    let src = plane.to_vec();
    for y in 0..h {
        let sy = if flip_y { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if flip_x { w - 1 - x } else { x };
            plane[y * w + x] = src[sy * w + sx];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(h: usize, w: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = (0..3 * h * w).map(|_| rng.random::<f32>()).collect();
        let mask = (0..h * w).map(|_| u8::from(rng.random_bool(0.3))).collect();
        Sample::new("s", h, w, image, mask).unwrap()
    }

    fn geometric(rotate180: bool, flip_horizontal: bool, flip_vertical: bool) -> AugmentParams {
        AugmentParams {
            rotate180,
            flip_horizontal,
            flip_vertical,
            ..AugmentParams::IDENTITY
        }
    }

    #[test]
    fn rotation_moves_corners() {
        let s = Sample::new("r", 2, 3, (0..18).map(|v| v as f32).collect(), vec![1, 0, 0, 0, 0, 0]).unwrap();
        let r = apply(&s, &geometric(true, false, false));
        assert_eq!(&r.image[..6], &[5.0, 4.0, 3.0, 2.0, 1.0, 0.0]);
        assert_eq!(r.mask, vec![0, 0, 0, 0, 0, 1]);
        let hf = apply(&s, &geometric(false, true, false));
        assert_eq!(&hf.image[..6], &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        let vf = apply(&s, &geometric(false, false, true));
        assert_eq!(&vf.image[..6], &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn identity_params_change_nothing() {
        let s = sample(5, 7, 1);
        assert_eq!(apply(&s, &AugmentParams::IDENTITY), s);
    }

    #[test]
    fn same_seed_same_output() {
        let s = sample(6, 4, 2);
        let a = augment(&s, 99);
        let b = augment(&s, 99);
        assert_eq!(a, b);
        let bits = |x: &Sample| x.image.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn jitter_touches_image_only_and_stays_in_range() {
        let s = sample(8, 8, 3);
        let p = AugmentParams {
            alpha: 1.2,
            beta: 0.1,
            ..AugmentParams::IDENTITY
        };
        let j = apply(&s, &p);
        assert_eq!(j.mask, s.mask);
        assert!(j.image.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(j.image, s.image);
    }

    #[test]
    fn draws_cover_all_flags_and_ranges() {
        let draws: Vec<_> = (0..200).map(AugmentParams::draw).collect();
        assert!(draws.iter().any(|d| d.rotate180) && draws.iter().any(|d| !d.rotate180));
        assert!(draws.iter().any(|d| d.flip_horizontal) && draws.iter().any(|d| d.flip_vertical));
        assert!(draws
            .iter()
            .all(|d| (0.8..=1.2).contains(&d.alpha) && (-0.1..=0.1).contains(&d.beta)));
    }

    proptest! {
        #[test]
        fn rotate_twice_is_identity(h in 1usize..9, w in 1usize..9, seed in 0u64..500) {
            let s = sample(h, w, seed);
            let r = geometric(true, false, false);
            prop_assert_eq!(apply(&apply(&s, &r), &r), s);
        }

        #[test]
        fn masks_stay_binary_and_geometry_commutes_with_binarization(h in 1usize..9, w in 1usize..9, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gray: Vec<u8> = (0..h * w).map(|_| rng.random()).collect();
            let bin = |g: &[u8]| g.iter().map(|&v| u8::from(v >= crate::data::MASK_THRESHOLD)).collect::<Vec<_>>();
            let p = AugmentParams::draw(seed);
            let s = Sample::new("s", h, w, vec![0.5; 3 * h * w], bin(&gray)).unwrap();
            let out = apply(&s, &p);
            prop_assert!(out.mask.iter().all(|&m| m <= 1));
            // transform the raw gray mask, then binarize
            let flip_x = p.flip_horizontal ^ p.rotate180;
            let flip_y = p.flip_vertical ^ p.rotate180;
            let mut g = gray.clone();
            remap(&mut g, h, w, flip_x, flip_y);
            prop_assert_eq!(out.mask, bin(&g));
        }
    }
}
