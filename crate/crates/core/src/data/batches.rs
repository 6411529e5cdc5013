//! Mixed-domain batching: one shuffled pass over the union of all training
//! sets per epoch, so a batch may hold samples from any domain.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Domain, Sample};
use crate::error::{Error, Result};
use crate::model::TaskId;
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<u32>,
    pub tasks: Vec<TaskId>,
    pub sample_ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacks samples (all of one size) into a batch.
    pub fn from_samples<'a>(items: impl IntoIterator<Item = (&'a Sample, TaskId)>, image_size: usize) -> Self {
        let mut data = Vec::new();
        let (mut labels, mut tasks, mut sample_ids) = (Vec::new(), Vec::new(), Vec::new());
        for (s, t) in items {
            data.extend(s.pixels());
            labels.push(s.label);
            tasks.push(t);
            sample_ids.push(s.id.clone());
        }
        let n = labels.len();
        Batch { images: Tensor::from_vec(n, 3, image_size, image_size, data), labels, tasks, sample_ids }
    }
}

/// Lazily materialized batches for one epoch.
pub struct MixedBatches<'a> {
    domains: &'a [Domain],
    order: Vec<(usize, usize)>,
    batch_size: usize,
    pos: usize,
}

impl MixedBatches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// `(domain index, sample index)` in emission order.
    pub fn order(&self) -> &[(usize, usize)] {
        &self.order
    }
}

impl Iterator for MixedBatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let size = self.domains[0].image_size();
        let items = self.order[self.pos..end].iter().map(|&(d, i)| (&self.domains[d].train[i], self.domains[d].task_label));
        let batch = Batch::from_samples(items, size);
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for MixedBatches<'_> {}

/// Shuffles the union of the domains' training samples with `epoch_seed`.
/// The last batch may be short.
pub fn mixed_batches(domains: &[Domain], batch_size: usize, epoch_seed: u64) -> Result<MixedBatches<'_>> {
    if domains.is_empty() {
        return Err(Error::invalid("mixed_batches needs at least one domain"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let size = domains[0].image_size();
    if domains.iter().any(|d| d.image_size() != size) {
        return Err(Error::Shape("all domains must share one image size".into()));
    }
    let mut order: Vec<(usize, usize)> =
        domains.iter().enumerate().flat_map(|(d, dom)| (0..dom.train.len()).map(move |i| (d, i))).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(MixedBatches { domains, order, batch_size, pos: 0 })
}
