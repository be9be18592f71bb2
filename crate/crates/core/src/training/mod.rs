//! Loss, optimizer, checkpoints and the training loop.

mod adam;
mod checkpoint;
mod fit;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor, OptimizerSnapshot, MAGIC, VERSION};
pub use fit::{checkpoint_path, fit, EpochRecord, FitOutcome, History, Schedule, Trainer};
pub use loss::{weighted_bce, BalanceFactor, LossConfig, DEFAULT_CLAMP};
