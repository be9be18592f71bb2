//! Tolerance-based segmentation metrics, reports and overlays.

mod confusion;
mod overlay;
mod report;

pub use confusion::{binarize, confusion_with_tolerance, dilate, disk, f1, pr_re_f1, Scores, ToleranceConfusion};
pub use overlay::{render_overlay, save_overlay_png, FALSE_POSITIVE, MATCHED, MISSED};
pub use report::{
    curve_thresholds, evaluate_items, evaluate_model, predict_samples, Aggregate, CurvePoint, EvalItem, ImageScore,
    MetricsReport, DEFAULT_THRESHOLD, DEFAULT_TOLERANCE,
};
