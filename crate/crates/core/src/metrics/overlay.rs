use image::{Rgb, RgbImage};

use super::dilate;
use crate::error::{Error, Result};

pub const MATCHED: [u8; 3] = [0, 255, 0];
pub const FALSE_POSITIVE: [u8; 3] = [255, 0, 0];
pub const MISSED: [u8; 3] = [0, 0, 255];

/// Colors tolerance-matched predictions green, unmatched predictions red and
/// unmatched ground truth blue. Other pixels show `background` (a
/// `3 x H x W` image in `[0, 1]`) or black.
pub fn render_overlay(
    pred: &[u8],
    gt: &[u8],
    height: usize,
    width: usize,
    tol: usize,
    background: Option<&[f32]>,
) -> Result<RgbImage> {
    let n = height * width;
    if pred.len() != n || gt.len() != n {
        return Err(Error::shape("render_overlay", &[pred.len()], &[gt.len()]));
    }
    if let Some(bg) = background {
        if bg.len() != 3 * n {
            return Err(Error::shape("render_overlay", &[bg.len()], &[3, height, width]));
        }
    }
    let near_gt = dilate(gt, height, width, tol);
    let near_pred = dilate(pred, height, width, tol);
    Ok(RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let i = y as usize * width + x as usize;
        let color = if pred[i] != 0 {
            if near_gt[i] != 0 {
                MATCHED
            } else {
                FALSE_POSITIVE
            }
        } else if gt[i] != 0 && near_pred[i] == 0 {
            MISSED
        } else {
            match background {
                Some(bg) => [0, 1, 2].map(|c| (bg[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8),
                None => [0, 0, 0],
            }
        };
        Rgb(color)
    }))
}

pub fn save_overlay_png(path: &std::path::Path, overlay: &RgbImage) -> Result<()> {
    overlay.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::confusion_with_tolerance;
    use rand::{Rng, SeedableRng};

    fn count(img: &RgbImage, c: [u8; 3]) -> u64 {
        img.pixels().filter(|p| p.0 == c).count() as u64
    }

    #[test]
    fn identical_masks_are_green_only() {
        let m = vec![0, 1, 1, 0, 1, 0];
        let img = render_overlay(&m, &m, 2, 3, 2, None).unwrap();
        assert_eq!(count(&img, MATCHED), 3);
        assert_eq!(count(&img, [0, 0, 0]), 3);
    }

    #[test]
    fn empty_prediction_is_blue_only() {
        let gt = vec![1, 0, 1, 1];
        let img = render_overlay(&[0; 4], &gt, 2, 2, 1, None).unwrap();
        assert_eq!(count(&img, MISSED), 3);
        assert_eq!(count(&img, MATCHED) + count(&img, FALSE_POSITIVE), 0);
    }

    #[test]
    fn colors_agree_with_confusion() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let p: Vec<u8> = (0..24 * 24).map(|_| u8::from(rng.random_bool(0.05))).collect();
            let g: Vec<u8> = (0..24 * 24).map(|_| u8::from(rng.random_bool(0.05))).collect();
            let c = confusion_with_tolerance(&p, &g, 24, 24, 2).unwrap();
            let img = render_overlay(&p, &g, 24, 24, 2, None).unwrap();
            assert_eq!(count(&img, MATCHED), c.matched_pred);
            assert_eq!(count(&img, FALSE_POSITIVE), c.pred_total - c.matched_pred);
            assert_eq!(count(&img, MISSED), c.gt_total - c.matched_gt);
        }
    }

    #[test]
    fn background_shows_through() {
        let bg = vec![0.5; 3 * 4];
        let img = render_overlay(&[0; 4], &[0; 4], 2, 2, 2, Some(&bg)).unwrap();
        assert!(img.pixels().all(|p| p.0 == [128, 128, 128]));
        assert!(render_overlay(&[0; 4], &[0; 3], 2, 2, 2, None).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.png");
        save_overlay_png(&path, &img).unwrap();
        assert_eq!(image::open(&path).unwrap().to_rgb8(), img);
    }
}
