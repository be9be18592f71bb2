use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_CLAMP: f64 = 1e-7;

/// Positive-class weight: fixed, or the negative/positive pixel ratio of the
/// training masks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BalanceFactor {
    Fixed(f64),
    Auto,
}

impl Default for BalanceFactor {
    fn default() -> Self {
        BalanceFactor::Auto
    }
}

impl BalanceFactor {
    /// Resolves `Auto` against binary masks. A split without crack pixels
    /// falls back to 1.
    pub fn resolve<'a>(self, masks: impl IntoIterator<Item = &'a [u8]>) -> Result<f64> {
        let omega = match self {
            BalanceFactor::Fixed(w) => w,
            BalanceFactor::Auto => {
                let (mut pos, mut total) = (0u64, 0u64);
                for m in masks {
                    pos += m.iter().filter(|&&v| v != 0).count() as u64;
                    total += m.len() as u64;
                }
                if pos == 0 {
                    1.0
                } else {
                    (total - pos) as f64 / pos as f64
                }
            }
        };
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::invalid(
                "omega_p",
                format!("must be positive and finite, got {omega}"),
            ));
        }
        Ok(omega)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub omega_p: f64,
    pub epsilon: f64,
}

impl LossConfig {
    pub fn new(omega_p: f64) -> Self {
        Self {
            omega_p,
            epsilon: DEFAULT_CLAMP,
        }
    }
}

/// `-(w*y*ln p + (1-y)*ln(1-p))` summed over pixels and averaged over the
/// leading (batch) axis. `pred` is the crack probability, clamped to
/// `[eps, 1-eps]`; the clamp passes no gradient.
pub fn weighted_bce<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("weighted_bce", pred.shape(), target.shape()));
    }
    if !(cfg.omega_p > 0.0) {
        return Err(Error::invalid(
            "weighted_bce",
            format!("omega_p must be positive, got {}", cfg.omega_p),
        ));
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 0.5) {
        return Err(Error::invalid(
            "weighted_bce",
            format!("clamp must lie in (0, 0.5), got {}", cfg.epsilon),
        ));
    }
    let batch = pred.shape().first().copied().unwrap_or(1).max(1) as f64;
    let (w, eps) = (cfg.omega_p, cfg.epsilon);
    let p = pred.to_f64_vec();
    let y = target.to_f64_vec();
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(
            "weighted_bce",
            format!("target must be binary, found {bad}"),
        ));
    }

    let mut total = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(&y) {
        let c = pi.clamp(eps, 1.0 - eps);
        let live = pi > eps && pi < 1.0 - eps;
        if yi == 1.0 {
            total -= w * c.ln();
            grad.push(if live { -w / (c * batch) } else { 0.0 });
        } else {
            total -= (1.0 - c).ln();
            grad.push(if live { 1.0 / ((1.0 - c) * batch) } else { 0.0 });
        }
    }
    let grad: Vec<T> = grad.into_iter().map(T::from_f64_lossy).collect();
    Ok(Tensor::from_op(
        "weighted_bce",
        vec![1],
        vec![T::from_f64_lossy(total / batch)],
        &[pred, target],
        Box::new(move |g| {
            let g0 = g[0];
            vec![Some(grad.iter().map(|&d| d * g0).collect()), None]
        }),
    ))
}
