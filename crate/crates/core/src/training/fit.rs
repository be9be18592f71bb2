use std::fs;
use std::path::{Path, PathBuf};

use super::{weighted_bce, AdamConfig, AdamState, BalanceFactor, Checkpoint, LossConfig, DEFAULT_CLAMP};
use crate::data::{batches, derive_seed, Sample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, DEFAULT_THRESHOLD, DEFAULT_TOLERANCE};
use crate::model::Model;
use crate::nn::{narrow_channels, Mode};

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    pub checkpoint_interval: u32,
    pub checkpoint_dir: Option<PathBuf>,
    pub adam: AdamConfig,
    pub balance: BalanceFactor,
    pub clamp: f64,
    /// Used for the per-epoch validation score.
    pub threshold: f64,
    pub tolerance: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 8,
            seed: 0,
            augment: true,
            checkpoint_interval: 50,
            checkpoint_dir: None,
            adam: AdamConfig::default(),
            balance: BalanceFactor::Auto,
            clamp: DEFAULT_CLAMP,
            threshold: DEFAULT_THRESHOLD,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: u32,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Macro tolerance-F1 on the validation set, when one is given.
    pub val_f1: Option<f64>,
    pub step_losses: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// `epoch,train_loss,val_f1` with an empty field when there is no
    /// validation score.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_f1\n");
        for r in &self.records {
            let f1 = r.val_f1.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, f1));
        }
        out
    }

    pub fn step_losses(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.step_losses.iter().copied())
            .collect()
    }
}

/// Model, optimizer and loss setup with the number of completed epochs.
pub struct Trainer {
    pub model: Model<f32>,
    pub optimizer: AdamState<f32>,
    pub loss: LossConfig,
    pub epoch: u32,
    pub schedule: Schedule,
}

impl Trainer {
    pub fn new(model: Model<f32>, schedule: Schedule, train: &[Sample]) -> Result<Self> {
        let omega = schedule.balance.resolve(train.iter().map(|s| s.mask.as_slice()))?;
        let optimizer = AdamState::new(schedule.adam, &model.params());
        Ok(Self {
            model,
            optimizer,
            loss: LossConfig {
                omega_p: omega,
                epsilon: schedule.clamp,
            },
            epoch: 0,
            schedule,
        })
    }

    /// Continues from a checkpoint; its optimizer state is required.
    pub fn resume(ckpt: &Checkpoint, schedule: Schedule, train: &[Sample]) -> Result<Self> {
        let (model, optimizer) = ckpt.restore(schedule.adam)?;
        let optimizer = optimizer
            .ok_or_else(|| Error::CheckpointInconsistent("checkpoint has no optimizer state to resume from".into()))?;
        let mut t = Self::new(model, schedule, train)?;
        t.optimizer = optimizer;
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, self.epoch, Some(&self.optimizer))
    }

    /// One pass over `train` in the order fixed by `(seed, epoch)`.
    pub fn train_epoch(&mut self, train: &[Sample]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let epoch = self.epoch + 1;
        let seed = derive_seed(self.schedule.seed, u64::from(epoch));
        self.model.set_mode(Mode::Train);
        let params = self.model.params();
        let mut step_losses = Vec::new();
        for (step, batch) in batches(train, self.schedule.batch_size, seed, self.schedule.augment)?.enumerate() {
            let batch = batch?;
            self.model.zero_grad();
            let probs = self.model.forward(&batch.images)?;
            let loss = weighted_bce(&narrow_channels(&probs, 1, 1)?, &batch.masks, &self.loss)?;
            let value = f64::from(loss.item());
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: value,
                    epoch: epoch as usize,
                    step,
                });
            }
            loss.backward()?;
            self.optimizer.update(&params)?;
            step_losses.push(value);
        }
        self.epoch = epoch;
        Ok(EpochRecord {
            epoch,
            train_loss: step_losses.iter().sum::<f64>() / step_losses.len() as f64,
            val_f1: None,
            step_losses,
        })
    }

    /// Trains until `schedule.epochs` epochs are complete.
    pub fn run(&mut self, train: &[Sample], val: &[Sample]) -> Result<FitOutcome> {
        let mut out = FitOutcome::default();
        if let Some(dir) = &self.schedule.checkpoint_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.epoch < self.schedule.epochs {
            let mut record = self.train_epoch(train)?;
            if !val.is_empty() {
                let report = evaluate_model(&self.model, val, self.schedule.threshold, self.schedule.tolerance)?;
                record.val_f1 = Some(report.macro_avg.f1);
            }
            let interval = self.schedule.checkpoint_interval;
            let due = (interval > 0 && self.epoch % interval == 0) || self.epoch == self.schedule.epochs;
            if let (true, Some(dir)) = (due, &self.schedule.checkpoint_dir) {
                let path = checkpoint_path(dir, self.epoch);
                self.checkpoint().save(&path)?;
                let better = match (record.val_f1, out.best) {
                    (Some(f), Some((_, best))) => f > best,
                    (Some(_), None) => true,
                    _ => false,
                };
                if better {
                    out.best = Some((self.epoch, record.val_f1.unwrap_or_default()));
                }
                out.checkpoints.push(path);
            }
            out.history.records.push(record);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOutcome {
    pub history: History,
    pub checkpoints: Vec<PathBuf>,
    /// Checkpointed epoch with the highest validation F1.
    pub best: Option<(u32, f64)>,
}

pub fn checkpoint_path(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("epoch_{epoch}.rhac"))
}

/// Trains `model` from scratch under `schedule`.
pub fn fit(
    model: Model<f32>,
    train: &[Sample],
    val: &[Sample],
    schedule: Schedule,
) -> Result<(Model<f32>, FitOutcome)> {
    let mut trainer = Trainer::new(model, schedule, train)?;
    let outcome = trainer.run(train, val)?;
    Ok((trainer.model, outcome))
}
