use super::{graph::no_grad, Element, Tensor};
use crate::error::Result;

/// Central-difference estimate of the gradient of the scalar function `f`
/// at `x`: `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element `i`.
///
/// `f` is evaluated with graph recording disabled on a constant copy of `x`.
pub fn finite_diff_grad<T: Element>(
    mut f: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
    x: &Tensor<T>,
    h: f64,
) -> Result<Tensor<T>> {
    assert!(h > 0.0, "finite difference step must be positive");
    let base = x.to_vec();
    let step = T::from_f64_lossy(h);
    let two_h = T::from_f64_lossy(2.0 * h);
    let mut grad = Vec::with_capacity(base.len());
    no_grad(|| -> Result<()> {
        let probe = Tensor::from_vec(x.shape(), base.clone())?;
        for i in 0..base.len() {
            probe.update_data(|d| d[i] = base[i] + step);
            let plus = f(&probe)?.item();
            probe.update_data(|d| d[i] = base[i] - step);
            let minus = f(&probe)?.item();
            probe.update_data(|d| d[i] = base[i]);
            grad.push((plus - minus) / two_h);
        }
        Ok(())
    })?;
    Tensor::from_vec(x.shape(), grad)
}

/// `||a - b|| / max(||a|| + ||b||, tiny)` in the Euclidean norm.
///
/// Used by the gradient checks; the norm form stays meaningful when
/// individual components are near zero.
pub fn relative_error<T: Element>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error: length mismatch");
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x.to_f64_lossy() - y.to_f64_lossy()));
    let scale = norm(&mut a.iter().map(|v| v.to_f64_lossy())) + norm(&mut b.iter().map(|v| v.to_f64_lossy()));
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}
