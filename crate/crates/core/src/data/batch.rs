use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{augment, derive_seed, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stacked images `N x 3 x H x W` and masks `N x 1 x H x W` (as 0/1 floats).
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
    /// Positions of the samples in the source list.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn stack(samples: &[&Sample], indices: Vec<usize>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let (h, w) = first.size();
        if let Some(odd) = samples.iter().find(|s| s.size() != (h, w)) {
            return Err(mixed_sizes(first, odd));
        }
        let n = samples.len();
        let images = samples.iter().flat_map(|s| s.image.iter().copied()).collect();
        let masks = samples
            .iter()
            .flat_map(|s| s.mask.iter().map(|&m| f32::from(m)))
            .collect();
        Ok(Self {
            images: Tensor::from_vec(&[n, 3, h, w], images)?,
            masks: Tensor::from_vec(&[n, 1, h, w], masks)?,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn mixed_sizes(a: &Sample, b: &Sample) -> Error {
    Error::Data(format!(
        "samples {} ({}x{}) and {} ({}x{}) differ in size; use batch size 1 or a fixed-size dataset",
        a.name, a.height, a.width, b.name, b.height, b.width
    ))
}

/// Sample order for one epoch: a permutation of `0..len` fixed by `seed`.
pub fn shuffled_order(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Lazily assembled batches over a shuffled order; the last batch may be
/// short. With `augment`, sample `i` is augmented with a seed derived from
/// `(seed, i)`.
pub struct Batches<'a> {
    samples: &'a [Sample],
    order: Vec<usize>,
    batch_size: usize,
    augment_seed: Option<u64>,
    pos: usize,
}

pub fn batches(samples: &[Sample], batch_size: usize, seed: u64, augment: bool) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::invalid("batches", "batch size must be at least 1"));
    }
    if batch_size > 1 {
        if let Some(first) = samples.first() {
            if let Some(odd) = samples.iter().find(|s| s.size() != first.size()) {
                return Err(mixed_sizes(first, odd));
            }
        }
    }
    Ok(Batches {
        samples,
        order: shuffled_order(samples.len(), seed),
        batch_size,
        augment_seed: augment.then_some(seed),
        pos: 0,
    })
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        let owned: Vec<Sample>;
        let refs: Vec<&Sample> = match self.augment_seed {
            Some(seed) => {
                owned = idx
                    .iter()
                    .map(|&i| augment(&self.samples[i], derive_seed(seed, i as u64)))
                    .collect();
                owned.iter().collect()
            }
            None => idx.iter().map(|&i| &self.samples[i]).collect(),
        };
        Some(Batch::stack(&refs, idx))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}
