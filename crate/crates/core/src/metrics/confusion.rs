use serde::Serialize;

use crate::error::{Error, Result};

/// `p >= threshold` is positive.
pub fn binarize(probs: &[f32], threshold: f32) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= threshold)).collect()
}

/// Tolerance-matched counts for one image (or pooled over several).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ToleranceConfusion {
    /// Predicted positives within the tolerance of some ground-truth positive.
    pub matched_pred: u64,
    pub pred_total: u64,
    /// Ground-truth positives within the tolerance of some predicted positive.
    pub matched_gt: u64,
    pub gt_total: u64,
}

impl ToleranceConfusion {
    pub fn merge(self, o: Self) -> Self {
        Self {
            matched_pred: self.matched_pred + o.matched_pred,
            pred_total: self.pred_total + o.pred_total,
            matched_gt: self.matched_gt + o.matched_gt,
            gt_total: self.gt_total + o.gt_total,
        }
    }
}

/// Offsets `(dy, dx)` with `dx^2 + dy^2 <= tol^2`.
pub fn disk(tol: usize) -> Vec<(isize, isize)> {
    let r = tol as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Binary dilation of an `h x w` mask by the Euclidean disk of radius `tol`.
pub fn dilate(mask: &[u8], h: usize, w: usize, tol: usize) -> Vec<u8> {
    if tol == 0 {
        return mask.iter().map(|&m| u8::from(m != 0)).collect();
    }
    let offsets = disk(tol);
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] == 0 {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    out[ny as usize * w + nx as usize] = 1;
                }
            }
        }
    }
    out
}

fn matched(mask: &[u8], dilated_other: &[u8]) -> u64 {
    mask.iter()
        .zip(dilated_other)
        .filter(|(&m, &d)| m != 0 && d != 0)
        .count() as u64
}

/// Counts predicted positives near ground truth and ground-truth positives
/// near predictions, "near" meaning Euclidean distance at most `tol`.
pub fn confusion_with_tolerance(pred: &[u8], gt: &[u8], h: usize, w: usize, tol: usize) -> Result<ToleranceConfusion> {
    if pred.len() != h * w || gt.len() != h * w {
        return Err(Error::shape("confusion_with_tolerance", &[pred.len()], &[gt.len()]));
    }
    Ok(ToleranceConfusion {
        matched_pred: matched(pred, &dilate(gt, h, w, tol)),
        pred_total: pred.iter().filter(|&&p| p != 0).count() as u64,
        matched_gt: matched(gt, &dilate(pred, h, w, tol)),
        gt_total: gt.iter().filter(|&&g| g != 0).count() as u64,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Scores {
    pub pr: f64,
    pub re: f64,
    pub f1: f64,
}

/// Precision, recall and F1. Empty prediction and empty ground truth score
/// 1 across the board; an empty side alone scores 0 on its ratio; F1 is 0
/// when both ratios are 0.
pub fn pr_re_f1(c: &ToleranceConfusion) -> Scores {
    if c.pred_total == 0 && c.gt_total == 0 {
        return Scores {
            pr: 1.0,
            re: 1.0,
            f1: 1.0,
        };
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let (pr, re) = (ratio(c.matched_pred, c.pred_total), ratio(c.matched_gt, c.gt_total));
    Scores { pr, re, f1: f1(pr, re) }
}

pub fn f1(pr: f64, re: f64) -> f64 {
    if pr + re == 0.0 {
        0.0
    } else {
        2.0 * pr * re / (pr + re)
    }
}
