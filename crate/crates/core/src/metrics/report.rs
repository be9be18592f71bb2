use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{binarize, confusion_with_tolerance, pr_re_f1, Scores, ToleranceConfusion};
use crate::data::{pad_to_multiple, round_up, Sample};
use crate::error::{Error, Result};
use crate::model::{Model, SIZE_MULTIPLE};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TOLERANCE: usize = 2;

/// Predicted crack probabilities for one image alongside its ground truth.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f32>,
    pub gt: Vec<u8>,
    /// Forward-pass time.
    pub seconds: f64,
    /// Forward time plus padding, transfer and cropping.
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub pr: f64,
    pub re: f64,
    pub f1: f64,
    pub seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub pr: f64,
    pub re: f64,
    pub f1: f64,
}

impl From<Scores> for Aggregate {
    fn from(s: Scores) -> Self {
        Self {
            pr: s.pr,
            re: s.re,
            f1: s.f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub pr: f64,
    pub re: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tool_version: String,
    pub threshold: f64,
    pub tolerance: usize,
    pub per_image: Vec<ImageScore>,
    /// Mean of the per-image scores; the headline numbers.
    #[serde(rename = "macro")]
    pub macro_avg: Aggregate,
    /// Scores of the pooled counts.
    pub micro: Aggregate,
    pub pr_curve: Vec<CurvePoint>,
    pub mean_seconds: f64,
    pub mean_total_seconds: f64,
    pub params: Option<usize>,
    pub flops: Option<u64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.mean_seconds = 0.0;
        r.mean_total_seconds = 0.0;
        for p in &mut r.per_image {
            p.seconds = 0.0;
            p.total_seconds = 0.0;
        }
        r
    }
}

/// Thresholds `0.01, 0.02, ..., 0.99`.
pub fn curve_thresholds() -> impl Iterator<Item = f64> {
    (1..=99).map(|k| k as f64 / 100.0)
}

fn macro_mean(scores: &[Scores]) -> Aggregate {
    let n = scores.len().max(1) as f64;
    Aggregate {
        pr: scores.iter().map(|s| s.pr).sum::<f64>() / n,
        re: scores.iter().map(|s| s.re).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

fn confusions(items: &[EvalItem], threshold: f64, tol: usize) -> Result<Vec<ToleranceConfusion>> {
    items
        .iter()
        .map(|it| confusion_with_tolerance(&binarize(&it.probs, threshold as f32), &it.gt, it.height, it.width, tol))
        .collect()
}

/// Per-image, macro and micro scores plus the precision/recall curve.
pub fn evaluate_items(items: &[EvalItem], threshold: f64, tol: usize) -> Result<MetricsReport> {
    if items.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    for it in items {
        if it.probs.len() != it.height * it.width {
            return Err(Error::shape("evaluate", &[it.probs.len()], &[it.height, it.width]));
        }
    }
    let conf = confusions(items, threshold, tol)?;
    let scores: Vec<Scores> = conf.iter().map(pr_re_f1).collect();
    let pooled = conf.iter().fold(ToleranceConfusion::default(), |a, &c| a.merge(c));
    let pr_curve = curve_thresholds()
        .map(|t| {
            let agg = macro_mean(&confusions(items, t, tol)?.iter().map(pr_re_f1).collect::<Vec<_>>());
            Ok(CurvePoint {
                t,
                pr: agg.pr,
                re: agg.re,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = items.len() as f64;
    Ok(MetricsReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        threshold,
        tolerance: tol,
        per_image: items
            .iter()
            .zip(&scores)
            .map(|(it, s)| ImageScore {
                name: it.name.clone(),
                pr: s.pr,
                re: s.re,
                f1: s.f1,
                seconds: it.seconds,
                total_seconds: it.total_seconds,
            })
            .collect(),
        macro_avg: macro_mean(&scores),
        micro: pr_re_f1(&pooled).into(),
        pr_curve,
        mean_seconds: items.iter().map(|i| i.seconds).sum::<f64>() / n,
        mean_total_seconds: items.iter().map(|i| i.total_seconds).sum::<f64>() / n,
        params: None,
        flops: None,
    })
}

/// Runs `model` on every sample (padded, then cropped back) and collects
/// probabilities with forward and total timings.
pub fn predict_samples(model: &Model<f32>, samples: &[Sample]) -> Result<Vec<EvalItem>> {
    samples
        .iter()
        .map(|s| {
            let start = Instant::now();
            let (padded, _) = pad_to_multiple(s, SIZE_MULTIPLE);
            let forward = Instant::now();
            let probs = model.predict_image(&padded.image, padded.height, padded.width)?;
            let seconds = forward.elapsed().as_secs_f64();
            let probs = crate::data::crop(&probs, padded.height, padded.width, s.height, s.width);
            Ok(EvalItem {
                name: s.name.clone(),
                height: s.height,
                width: s.width,
                probs,
                gt: s.mask.clone(),
                seconds,
                total_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Evaluates a model on a set of samples; the report carries the model's
/// parameter count and the FLOPs at the first sample's padded size.
pub fn evaluate_model(model: &Model<f32>, samples: &[Sample], threshold: f64, tol: usize) -> Result<MetricsReport> {
    let items = predict_samples(model, samples)?;
    let mut report = evaluate_items(&items, threshold, tol)?;
    report.params = Some(model.count_params());
    let first = &samples[0];
    let shape = [
        1,
        model.config().in_channels,
        round_up(first.height, SIZE_MULTIPLE),
        round_up(first.width, SIZE_MULTIPLE),
    ];
    report.flops = Some(model.count_flops(shape)?);
    Ok(report)
}
