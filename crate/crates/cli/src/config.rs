//! Run settings: a `key = value` file merged with command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use rhanet_core::model::Variant;
use rhanet_core::training::BalanceFactor;

use crate::CliError;

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "data_root",
    "train_list",
    "val_list",
    "eval_list",
    "variant",
    "width",
    "lr",
    "batch",
    "epochs",
    "seed",
    "tolerance",
    "threshold",
    "omega_p",
    "out",
    "checkpoint_interval",
    "augment",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub train_list: Option<PathBuf>,
    pub val_list: Option<PathBuf>,
    pub eval_list: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub width: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<u32>,
    pub seed: Option<u64>,
    pub tolerance: Option<usize>,
    pub threshold: Option<f64>,
    pub omega_p: Option<BalanceFactor>,
    pub out: Option<PathBuf>,
    pub checkpoint_interval: Option<u32>,
    pub augment: Option<bool>,
}

fn bad(key: &str, expected: &str, value: &str) -> CliError {
    CliError::Config(format!("{key}: expected {expected}, got {value:?}"))
}

fn positive<N: std::str::FromStr + PartialOrd + Default>(key: &str, value: &str) -> Result<N, CliError> {
    match value.parse::<N>() {
        Ok(v) if v > N::default() => Ok(v),
        _ => Err(bad(key, "a positive integer", value)),
    }
}

impl RunConfig {
    /// Validates and stores one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "data_root" => self.data_root = Some(PathBuf::from(v)),
            "train_list" => self.train_list = Some(PathBuf::from(v)),
            "val_list" => self.val_list = Some(PathBuf::from(v)),
            "eval_list" => self.eval_list = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            "variant" => {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                self.variant = Some(v.parse().map_err(|_| bad(key, &names.join("|"), v))?);
            }
            "width" => self.width = Some(positive(key, v)?),
            "batch" => self.batch = Some(positive(key, v)?),
            "epochs" => self.epochs = Some(positive(key, v)?),
            "checkpoint_interval" => self.checkpoint_interval = Some(positive(key, v)?),
            "seed" => self.seed = Some(v.parse().map_err(|_| bad(key, "a non-negative integer", v))?),
            "tolerance" => self.tolerance = Some(v.parse().map_err(|_| bad(key, "a non-negative integer", v))?),
            "lr" => match v.parse::<f64>() {
                Ok(x) if x > 0.0 && x.is_finite() => self.lr = Some(x),
                _ => return Err(bad(key, "a positive number", v)),
            },
            "threshold" => match v.parse::<f64>() {
                Ok(x) if (0.0..=1.0).contains(&x) => self.threshold = Some(x),
                _ => return Err(bad(key, "a number in [0, 1]", v)),
            },
            "omega_p" => {
                self.omega_p = Some(if v == "auto" {
                    BalanceFactor::Auto
                } else {
                    match v.parse::<f64>() {
                        Ok(x) if x > 0.0 && x.is_finite() => BalanceFactor::Fixed(x),
                        _ => return Err(bad(key, "`auto` or a positive number", v)),
                    }
                })
            }
            "augment" => {
                self.augment = Some(match v {
                    "true" | "yes" | "1" => true,
                    "false" | "no" | "0" => false,
                    _ => return Err(bad(key, "true or false", v)),
                })
            }
            _ => {
                return Err(CliError::Config(format!(
                    "unknown key {key:?} (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |e: CliError| CliError::Config(format!("{}:{}: {}", origin.display(), i + 1, e.message()));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(CliError::Config(format!("expected `key = value`, got {line:?}"))))?;
            cfg.set(key.trim(), value).map_err(at)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Settings from `over` replace those in `self`.
    pub fn merge(self, over: RunConfig) -> RunConfig {
        RunConfig {
            data_root: over.data_root.or(self.data_root),
            train_list: over.train_list.or(self.train_list),
            val_list: over.val_list.or(self.val_list),
            eval_list: over.eval_list.or(self.eval_list),
            variant: over.variant.or(self.variant),
            width: over.width.or(self.width),
            lr: over.lr.or(self.lr),
            batch: over.batch.or(self.batch),
            epochs: over.epochs.or(self.epochs),
            seed: over.seed.or(self.seed),
            tolerance: over.tolerance.or(self.tolerance),
            threshold: over.threshold.or(self.threshold),
            omega_p: over.omega_p.or(self.omega_p),
            out: over.out.or(self.out),
            checkpoint_interval: over.checkpoint_interval.or(self.checkpoint_interval),
            augment: over.augment.or(self.augment),
        }
    }

    pub fn require<'a>(&self, key: &str, value: &'a Option<PathBuf>) -> Result<&'a PathBuf, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("missing required setting {key} (--{})", key.replace('_', "-"))))
    }

    pub fn variant(&self) -> Variant {
        self.variant.unwrap_or(Variant::Rha)
    }

    pub fn width(&self) -> usize {
        self.width.unwrap_or(16)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(rhanet_core::metrics::DEFAULT_THRESHOLD)
    }

    pub fn tolerance(&self) -> usize {
        self.tolerance.unwrap_or(rhanet_core::metrics::DEFAULT_TOLERANCE)
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("rhanet-out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let text = "# run\nvariant = rha-lite\nwidth=8\n\nomega_p = auto\nlr = 0.01\naugment = false\n";
        let cfg = RunConfig::parse(text, Path::new("c.cfg")).unwrap();
        assert_eq!(cfg.variant, Some(Variant::RhaLite));
        assert_eq!(cfg.width, Some(8));
        assert_eq!(cfg.omega_p, Some(BalanceFactor::Auto));
        assert_eq!(cfg.lr, Some(0.01));
        assert_eq!(cfg.augment, Some(false));
    }

    #[test]
    fn unknown_key_and_bad_value_name_the_key() {
        let err = RunConfig::parse("widht = 4\n", Path::new("c.cfg")).unwrap_err();
        assert!(err.message().contains("widht") && err.message().contains("c.cfg:1"));
        let err = RunConfig::parse("# x\nwidth = zero\n", Path::new("c.cfg")).unwrap_err();
        assert!(err.message().contains("width") && err.message().contains(":2"));
        for (k, v) in [
            ("width", "0"),
            ("lr", "-1"),
            ("threshold", "1.5"),
            ("omega_p", "0"),
            ("variant", "unet"),
        ] {
            assert!(RunConfig::default().set(k, v).is_err(), "{k}={v}");
        }
        assert!(RunConfig::parse("no equals sign\n", Path::new("c")).is_err());
    }

    #[test]
    fn flags_win() {
        let file = RunConfig::parse("width = 8\nseed = 3\n", Path::new("c")).unwrap();
        let mut flags = RunConfig::default();
        flags.set("width", "4").unwrap();
        let merged = file.merge(flags);
        assert_eq!((merged.width(), merged.seed()), (4, 3));
    }
}
