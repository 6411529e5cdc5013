//! Fixed probe set: `per_class` test images from every class of every
//! contributing domain.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batches::Batch, Domain, Sample};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const DEFAULT_PROBE_PER_CLASS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSample {
    pub sample_id: String,
    pub domain: String,
    pub class: u32,
    pub image: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSet {
    pub per_class: usize,
    pub image_size: usize,
    pub samples: Vec<ProbeSample>,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.sample_id.clone()).collect()
    }

    /// Consecutive batches of at most `size` probe images, in probe order.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        self.samples.chunks(size.max(1)).map(move |chunk| {
            let owned: Vec<Sample> = chunk
                .iter()
                .map(|p| Sample { id: p.sample_id.clone(), label: p.class, image: p.image.clone() })
                .collect();
            Batch::from_samples(owned.iter().map(|s| (s, 0)), self.image_size)
        })
    }

    /// `sample_id,domain,class` per line.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{}", s.sample_id, s.domain, s.class);
        }
        out
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        crate::model::checkpoint::write_atomic(path, self.manifest().as_bytes())
    }
}

/// Draws the probe set; the result is a pure function of the inputs.
pub fn probe_set(domains: &[Domain], per_class: usize, seed: u64) -> Result<ProbeSet> {
    if domains.is_empty() {
        return Err(Error::invalid("probe set needs at least one domain"));
    }
    if per_class == 0 {
        return Err(Error::invalid("probe per_class must be at least 1"));
    }
    let image_size = domains[0].image_size();
    if domains.iter().any(|d| d.image_size() != image_size) {
        return Err(Error::Shape("probe domains must share one image size".into()));
    }
    let mut samples = Vec::new();
    for d in domains {
        for (class, pool) in d.test_by_class().into_iter().enumerate() {
            if pool.len() < per_class {
                return Err(Error::Shortfall {
                    domain: d.name().to_string(),
                    detail: format!("class {class}: {} test samples, probe needs {per_class}", pool.len()),
                });
            }
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            let rng_seed = derive_seed(["probe".to_string(), seed.to_string(), d.name().to_string(), class.to_string()]);
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
            let mut chosen: Vec<usize> = idx.into_iter().take(per_class).collect();
            chosen.sort_unstable();
            for i in chosen {
                let s = pool[i];
                samples.push(ProbeSample {
                    sample_id: s.id.clone(),
                    domain: d.name().to_string(),
                    class: s.label,
                    image: s.image.clone(),
                });
            }
        }
    }
    Ok(ProbeSet { per_class, image_size, samples })
}
