//! Dataset loading, augmentation, padding and batching.

mod augment;
mod batch;
mod pad;
mod sample;
mod split;
pub mod synthetic;

pub use augment::{apply as apply_augment, augment, AugmentParams, BRIGHTNESS_RANGE, CONTRAST_RANGE};
pub use batch::{batches, shuffled_order, Batch, Batches};
pub use pad::{crop, pad_to_multiple, reflect_pad, round_up, OriginalSize};
pub use sample::{load_image, load_mask, load_sample, save_image_png, save_mask_png, Sample, MASK_THRESHOLD};
pub use split::SplitList;

use std::path::Path;

use crate::error::Result;

/// Loads every pair of a split list.
pub fn load_split(list: &SplitList) -> Result<Vec<Sample>> {
    list.entries.iter().map(|(img, mask)| load_sample(img, mask)).collect()
}

/// Reads a split file against `data_root` and loads all samples.
pub fn load_split_file(path: &Path, data_root: &Path) -> Result<Vec<Sample>> {
    load_split(&SplitList::load(path, data_root)?)
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer), so that
/// per-epoch and per-sample generators are independent yet reproducible.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
