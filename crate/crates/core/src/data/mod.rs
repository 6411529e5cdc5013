//! Balanced classification domains, mixed-domain batching and the fixed
//! probe set used for representation similarity.

mod batches;
mod folder;
mod probe;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskId;

pub use batches::{mixed_batches, Batch, MixedBatches};
pub use probe::{probe_set, ProbeSample, ProbeSet, DEFAULT_PROBE_PER_CLASS};
pub use synthetic::{make_synthetic_domain, SyntheticDomainParams};

pub const DEFAULT_IMAGE_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMethod {
    #[default]
    Bicubic,
    Bilinear,
    Nearest,
}

/// Where a domain's images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSource {
    /// Two roots laid out as `<root>/<class_name>/<file>`.
    ImageFolder {
        train: PathBuf,
        test: PathBuf,
        /// Cap on test images per class; all are used when absent.
        #[serde(default)]
        test_per_class: Option<usize>,
    },
    Synthetic {
        test_per_class: usize,
        shift_seed: u64,
        #[serde(default = "synthetic::default_noise_std")]
        noise_std: f64,
        #[serde(default)]
        prototype_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub source: DomainSource,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub resize_method: ResizeMethod,
    #[serde(default)]
    pub class_subset_seed: u64,
    #[serde(default)]
    pub sample_subset_seed: u64,
}

fn default_image_size() -> usize {
    DEFAULT_IMAGE_SIZE
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains([',', '/', '\n']) {
            return Err(Error::invalid(format!("domain name {:?} must be non-empty without ',' or '/'", self.name)));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(format!("{}: num_classes must be at least 2", self.name)));
        }
        if self.train_per_class < 1 {
            return Err(Error::invalid(format!("{}: train_per_class must be at least 1", self.name)));
        }
        if self.image_size < 4 {
            return Err(Error::invalid(format!("{}: image_size must be at least 4", self.name)));
        }
        if let DomainSource::Synthetic { test_per_class, noise_std, .. } = &self.source {
            if *test_per_class < 1 {
                return Err(Error::invalid(format!("{}: test_per_class must be at least 1", self.name)));
            }
            if !(noise_std.is_finite() && *noise_std >= 0.0) {
                return Err(Error::invalid(format!("{}: noise_std must be finite and non-negative", self.name)));
            }
        }
        Ok(())
    }
}

/// One image with its class label. Pixels are CHW, RGB, quantized to `u8`;
/// [`Sample::pixels`] rescales them to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub label: u32,
    pub image: Vec<u8>,
}

impl Sample {
    pub fn pixels(&self) -> impl Iterator<Item = f32> + '_ {
        self.image.iter().map(|&b| f32::from(b) / 255.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub spec: DomainSpec,
    pub task_label: TaskId,
    /// Class names in label order.
    pub class_names: Vec<String>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Domain {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn image_size(&self) -> usize {
        self.spec.image_size
    }

    pub fn with_task_label(mut self, task: TaskId) -> Self {
        self.task_label = task;
        self
    }

    /// Per-class counts of the training split.
    pub fn train_histogram(&self) -> Vec<usize> {
        histogram(&self.train, self.num_classes())
    }

    pub fn test_histogram(&self) -> Vec<usize> {
        histogram(&self.test, self.num_classes())
    }

    /// Test samples grouped by class, each group in split order.
    pub fn test_by_class(&self) -> Vec<Vec<&Sample>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for s in &self.test {
            out[s.label as usize].push(s);
        }
        out
    }

    /// Keeps only the first `n` training samples (in split order).
    pub fn truncate_train(&mut self, n: usize) {
        self.train.truncate(n);
    }
}

fn histogram(samples: &[Sample], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for s in samples {
        h[s.label as usize] += 1;
    }
    h
}

/// Builds a balanced domain. Class and sample choices depend only on the
/// spec's seeds.
pub fn build_domain(spec: &DomainSpec) -> Result<Domain> {
    spec.validate()?;
    match &spec.source {
        DomainSource::ImageFolder { train, test, test_per_class } => {
            folder::build(spec, train, test, *test_per_class)
        }
        DomainSource::Synthetic { test_per_class, shift_seed, noise_std, prototype_seed } => {
            let params = SyntheticDomainParams {
                num_classes: spec.num_classes,
                train_per_class: spec.train_per_class,
                test_per_class: *test_per_class,
                shift_seed: *shift_seed,
                noise_std: *noise_std,
                image_size: spec.image_size,
                prototype_seed: *prototype_seed,
                sample_seed: spec.sample_subset_seed,
            };
            let mut d = make_synthetic_domain(&params)?;
            d.spec = spec.clone();
            for s in d.train.iter_mut().chain(d.test.iter_mut()) {
                s.id = format!("{}/{}", spec.name, s.id.split_once('/').map_or(s.id.as_str(), |x| x.1));
            }
            Ok(d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn synthetic_spec(name: &str, classes: usize, per_class: usize, shift: u64) -> DomainSpec {
        DomainSpec {
            name: name.into(),
            num_classes: classes,
            train_per_class: per_class,
            source: DomainSource::Synthetic {
                test_per_class: 4,
                shift_seed: shift,
                noise_std: 0.1,
                prototype_seed: 0,
            },
            image_size: 8,
            resize_method: ResizeMethod::Bicubic,
            class_subset_seed: 0,
            sample_subset_seed: 5,
        }
    }

    #[test]
    fn synthetic_build_is_balanced() {
        let d = build_domain(&synthetic_spec("toy", 3, 7, 0)).unwrap();
        assert_eq!(d.train_histogram(), vec![7, 7, 7]);
        assert!(d.train.iter().all(|s| s.id.starts_with("toy/")));
        assert!(d.train.iter().all(|s| s.image.len() == 3 * 8 * 8));
    }

    #[test]
    fn build_is_deterministic() {
        let spec = synthetic_spec("toy", 3, 5, 2);
        assert_eq!(build_domain(&spec).unwrap(), build_domain(&spec).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = synthetic_spec("toy", 1, 5, 0);
        assert!(build_domain(&s).is_err());
        s.num_classes = 2;
        s.train_per_class = 0;
        assert!(build_domain(&s).is_err());
        s.train_per_class = 1;
        s.name = "a,b".into();
        assert!(build_domain(&s).is_err());
    }

    #[test]
    fn spec_json_rejects_unknown_keys() {
        let json = r#"{"name":"a","num_classes":2,"train_per_class":1,
            "source":{"kind":"synthetic","test_per_class":1,"shift_seed":0},"bogus":1}"#;
        assert!(serde_json::from_str::<DomainSpec>(json).is_err());
        let ok = json.replace(r#","bogus":1"#, "");
        let spec: DomainSpec = serde_json::from_str(&ok).unwrap();
        assert_eq!(spec.image_size, 32);
        assert_eq!(spec.resize_method, ResizeMethod::Bicubic);
    }
}
