use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rhanet_core::data::{self, pad_to_multiple, Sample};
use rhanet_core::metrics::{self, EvalItem, MetricsReport};
use rhanet_core::model::{Model, ModelConfig, Variant, SIZE_MULTIPLE};
use rhanet_core::nn::Mode;
use rhanet_core::tensor::no_grad;
use rhanet_core::training::{fit, AdamConfig, Checkpoint, Schedule};
use rhanet_core::{Error, Tensor};

use crate::config::RunConfig;
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_list(cfg: &RunConfig, key: &str, list: &Option<PathBuf>) -> Result<Vec<Sample>, CliError> {
    let root = cfg.require("data_root", &cfg.data_root)?;
    let list = cfg.require(key, list)?;
    let samples = data::load_split_file(list, root)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("{} lists no samples", list.display())));
    }
    Ok(samples)
}

/// Reads a checkpoint, keeping "cannot read" apart from "not a checkpoint".
fn load_model(path: &Path) -> Result<Model<f32>, CliError> {
    let ckpt = Checkpoint::load(path).map_err(|e| match e {
        Error::Io { source, .. } => CliError::Data(format!("cannot read checkpoint {}: {source}", path.display())),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })?;
    let (mut model, _) = ckpt.restore(AdamConfig::default())?;
    model.set_mode(Mode::Eval);
    Ok(model)
}

fn print_summary(report: &MetricsReport) {
    println!(
        "images={} macro Pr={:.4} Re={:.4} F1={:.4} | micro Pr={:.4} Re={:.4} F1={:.4}",
        report.per_image.len(),
        report.macro_avg.pr,
        report.macro_avg.re,
        report.macro_avg.f1,
        report.micro.pr,
        report.micro.re,
        report.micro.f1
    );
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let train = load_list(cfg, "train_list", &cfg.train_list)?;
    let val = match &cfg.val_list {
        Some(_) => load_list(cfg, "val_list", &cfg.val_list)?,
        None => Vec::new(),
    };
    let out = cfg.out();
    create_dir(&out)?;

    let padded: Vec<Sample> = train.iter().map(|s| pad_to_multiple(s, SIZE_MULTIPLE).0).collect();
    let model = Model::<f32>::build(ModelConfig::new(cfg.variant(), cfg.width()), cfg.seed())?;
    let defaults = Schedule::default();
    let schedule = Schedule {
        epochs: cfg.epochs.unwrap_or(defaults.epochs),
        batch_size: cfg.batch.unwrap_or(defaults.batch_size),
        seed: cfg.seed(),
        augment: cfg.augment.unwrap_or(defaults.augment),
        checkpoint_interval: cfg.checkpoint_interval.unwrap_or(defaults.checkpoint_interval),
        checkpoint_dir: Some(out.clone()),
        adam: AdamConfig {
            lr: cfg.lr.unwrap_or(defaults.adam.lr),
            ..defaults.adam
        },
        balance: cfg.omega_p.unwrap_or(defaults.balance),
        threshold: cfg.threshold(),
        tolerance: cfg.tolerance(),
        ..defaults
    };
    eprintln!(
        "training {} (W={}, {} params) on {} images for {} epochs",
        cfg.variant(),
        cfg.width(),
        model.count_params(),
        train.len(),
        schedule.epochs
    );
    let (model, outcome) = fit(model, &padded, &val, schedule)?;
    write(&out.join("history.csv"), &outcome.history.to_csv())?;
    if let Some((epoch, f1)) = outcome.best {
        eprintln!("best validation F1 {f1:.4} at epoch {epoch}");
    }
    let eval_set = if val.is_empty() { &train } else { &val };
    let report = metrics::evaluate_model(&model, eval_set, cfg.threshold(), cfg.tolerance())?;
    write(&out.join("report.json"), &report.to_json())?;
    print_summary(&report);
    Ok(())
}

fn find_prediction(dir: &Path, name: &str) -> Option<PathBuf> {
    ["png", "bmp"]
        .iter()
        .map(|ext| dir.join(format!("{name}.{ext}")))
        .find(|p| p.is_file())
}

pub fn eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    pred_dir: Option<&Path>,
    overlays: bool,
) -> Result<(), CliError> {
    let samples = load_list(cfg, "eval_list", &cfg.eval_list)?;
    let (items, model) = match (checkpoint, pred_dir) {
        (Some(ckpt), None) => {
            let model = load_model(ckpt)?;
            (metrics::predict_samples(&model, &samples)?, Some(model))
        }
        (None, Some(dir)) => {
            let items = samples
                .iter()
                .map(|s| {
                    let path = find_prediction(dir, &s.name).ok_or_else(|| {
                        CliError::Data(format!("missing prediction for {} in {}", s.name, dir.display()))
                    })?;
                    let (h, w, mask) = data::load_mask(&path)?;
                    if (h, w) != s.size() {
                        return Err(CliError::Data(format!(
                            "prediction {} is {h}x{w}, ground truth is {}x{}",
                            path.display(),
                            s.height,
                            s.width
                        )));
                    }
                    Ok(EvalItem {
                        name: s.name.clone(),
                        height: h,
                        width: w,
                        probs: mask.iter().map(|&m| f32::from(m)).collect(),
                        gt: s.mask.clone(),
                        seconds: 0.0,
                        total_seconds: 0.0,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            (items, None)
        }
        _ => {
            return Err(CliError::Config(
                "eval needs exactly one of --checkpoint or --pred-dir".into(),
            ))
        }
    };

    let mut report = metrics::evaluate_items(&items, cfg.threshold(), cfg.tolerance())?;
    if let (Some(model), Some(first)) = (&model, samples.first()) {
        let padded = pad_to_multiple(first, SIZE_MULTIPLE).0;
        report.params = Some(model.count_params());
        report.flops = Some(model.count_flops([1, 3, padded.height, padded.width])?);
    }
    let out = cfg.out();
    create_dir(&out)?;
    write(&out.join("report.json"), &report.to_json())?;
    if overlays {
        let dir = out.join("overlays");
        create_dir(&dir)?;
        for (item, sample) in items.iter().zip(&samples) {
            let pred = metrics::binarize(&item.probs, cfg.threshold() as f32);
            let img = metrics::render_overlay(
                &pred,
                &item.gt,
                item.height,
                item.width,
                cfg.tolerance(),
                Some(&sample.image),
            )?;
            metrics::save_overlay_png(&dir.join(format!("{}.png", item.name)), &img)?;
        }
    }
    print_summary(&report);
    Ok(())
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, image: &Path, gt: Option<&Path>) -> Result<(), CliError> {
    let model = load_model(checkpoint)?;
    let (h, w, pixels) = data::load_image(image)?;
    let probs = model.predict_image(&pixels, h, w)?;
    let mask = metrics::binarize(&probs, cfg.threshold() as f32);
    let stem = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let out = cfg.out();
    create_dir(&out)?;
    let mask_path = out.join(format!("{stem}_mask.png"));
    data::save_mask_png(&mask_path, h, w, &mask)?;
    println!("{}", mask_path.display());
    if let Some(gt) = gt {
        let (gh, gw, truth) = data::load_mask(gt)?;
        if (gh, gw) != (h, w) {
            return Err(CliError::Data(format!(
                "{} is {gh}x{gw}, image is {h}x{w}",
                gt.display()
            )));
        }
        let overlay = metrics::render_overlay(&mask, &truth, h, w, cfg.tolerance(), Some(&pixels))?;
        let path = out.join(format!("{stem}_overlay.png"));
        metrics::save_overlay_png(&path, &overlay)?;
        println!("{}", path.display());
    }
    Ok(())
}

/// `HxW`, `CxHxW` or `NxCxHxW`; missing leading extents default to 1 and 3.
pub fn parse_shape(s: &str) -> Result<[usize; 4], CliError> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>().ok().filter(|&v| v > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::Config(format!("shape: expected HxW, CxHxW or NxCxHxW, got {s:?}")))?;
    match dims.as_slice() {
        &[h, w] => Ok([1, 3, h, w]),
        &[c, h, w] => Ok([1, c, h, w]),
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(CliError::Config(format!(
            "shape: expected HxW, CxHxW or NxCxHxW, got {s:?}"
        ))),
    }
}

pub fn bench(checkpoint: &Path, iters: usize, shape: &str) -> Result<(), CliError> {
    if iters == 0 {
        return Err(CliError::Config("iters: expected a positive integer, got \"0\"".into()));
    }
    let model = load_model(checkpoint)?;
    let shape = parse_shape(shape)?;
    let x = Tensor::<f32>::full(&shape, 0.5);
    no_grad(|| model.forward(&x))?;
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        no_grad(|| model.forward(&x))?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / iters as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / iters as f64;
    println!(
        "{} W={} shape={}x{}x{}x{} iters={iters} mean_ms={mean:.3} std_ms={:.3}",
        model.config().variant,
        model.config().base_width,
        shape[0],
        shape[1],
        shape[2],
        shape[3],
        var.sqrt()
    );
    Ok(())
}

pub fn inspect(cfg: &RunConfig, shape: &str) -> Result<(), CliError> {
    let shape = parse_shape(shape)?;
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let model = Model::<f32>::build(ModelConfig::new(v, cfg.width()), 0)?;
        rows.push((v, model.count_params(), model.count_flops(shape)?));
    }
    rows.sort_by_key(|&(_, params, _)| params);
    println!("{:<14}{:>12}{:>16}", "variant", "params", "GFLOPs");
    for (v, params, flops) in rows {
        println!("{:<14}{:>12}{:>16.3}", v.name(), params, flops as f64 / 1e9);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(parse_shape("480x640").unwrap(), [1, 3, 480, 640]);
        assert_eq!(parse_shape("3x32x48").unwrap(), [1, 3, 32, 48]);
        assert_eq!(parse_shape("2x3x16x16").unwrap(), [2, 3, 16, 16]);
        assert!(parse_shape("16").is_err());
        assert!(parse_shape("0x16").is_err());
        assert!(parse_shape("ax16").is_err());
    }
}
