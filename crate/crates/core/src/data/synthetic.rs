//! Procedural texture domains.
//!
//! Every class owns a prototype made of a background colour and a few
//! coloured sinusoidal gratings. Samples jitter the prototype (translation,
//! orientation, amplitude, a random distractor grating, pixel noise). The
//! `shift_seed` moves the whole domain by rotating all colours around the
//! grey axis and scaling spatial frequencies; both grow monotonically with
//! the shift value, so domains with nearby shift values look alike while
//! class identities are shared across domains.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Domain, DomainSource, DomainSpec, ResizeMethod, Sample};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

const GRATINGS_PER_CLASS: usize = 3;
/// Hue rotation per unit of shift, radians (20°).
const HUE_STEP: f64 = PI / 9.0;
/// Multiplicative frequency change per unit of shift.
const FREQ_STEP: f64 = 1.08;
const ORIENTATION_JITTER: f64 = 0.35;
const DISTRACTOR_AMPLITUDE: f64 = 0.6;

pub(crate) fn default_noise_std() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomainParams {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub shift_seed: u64,
    pub noise_std: f64,
    pub image_size: usize,
    /// Shared by label-compatible domains; fixes the class prototypes.
    pub prototype_seed: u64,
    /// Drives per-sample jitter and noise.
    pub sample_seed: u64,
}

impl SyntheticDomainParams {
    pub fn new(num_classes: usize, train_per_class: usize, test_per_class: usize, shift_seed: u64) -> Self {
        Self {
            num_classes,
            train_per_class,
            test_per_class,
            shift_seed,
            noise_std: default_noise_std(),
            image_size: super::DEFAULT_IMAGE_SIZE,
            prototype_seed: 0,
            sample_seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("synthetic domain needs at least 2 classes"));
        }
        if self.train_per_class < 1 || self.test_per_class < 1 {
            return Err(Error::invalid("synthetic domain needs at least one sample per class and split"));
        }
        if self.image_size < 4 {
            return Err(Error::invalid("synthetic image size must be at least 4"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Grating {
    /// Cycles per image width.
    freq: f64,
    orientation: f64,
    amplitude: f64,
    color: [f64; 3],
}

#[derive(Debug, Clone)]
struct Prototype {
    background: [f64; 3],
    gratings: Vec<Grating>,
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
}

fn random_grating(rng: &mut ChaCha8Rng) -> Grating {
    Grating {
        freq: rng.random_range(1.0..3.5),
        orientation: rng.random_range(0.0..PI),
        amplitude: rng.random_range(0.5..1.0),
        color: random_color(rng),
    }
}

fn prototype(prototype_seed: u64, class: usize) -> Prototype {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed([
        "prototype".to_string(),
        prototype_seed.to_string(),
        class.to_string(),
    ]));
    let background = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
    let gratings = (0..GRATINGS_PER_CLASS).map(|_| random_grating(&mut rng)).collect();
    Prototype { background, gratings }
}

/// Rotation about the grey axis (Rodrigues), applied to offsets from grey.
fn hue_rotate(c: [f64; 3], angle: f64) -> [f64; 3] {
    let k = 1.0 / 3f64.sqrt();
    let (s, co) = angle.sin_cos();
    let dot = k * (c[0] + c[1] + c[2]);
    let cross = [k * (c[2] - c[1]), k * (c[0] - c[2]), k * (c[1] - c[0])];
    [
        c[0] * co + cross[0] * s + k * dot * (1.0 - co),
        c[1] * co + cross[1] * s + k * dot * (1.0 - co),
        c[2] * co + cross[2] * s + k * dot * (1.0 - co),
    ]
}

struct Shift {
    hue: f64,
    freq_scale: f64,
}

impl Shift {
    fn new(shift_seed: u64) -> Self {
        Self { hue: shift_seed as f64 * HUE_STEP, freq_scale: FREQ_STEP.powf(shift_seed as f64) }
    }

    fn color(&self, c: [f64; 3]) -> [f64; 3] {
        hue_rotate(c, self.hue)
    }

    fn background(&self, bg: [f64; 3]) -> [f64; 3] {
        let grey = [bg[0] - 0.5, bg[1] - 0.5, bg[2] - 0.5];
        let r = hue_rotate(grey, self.hue);
        [r[0] + 0.5, r[1] + 0.5, r[2] + 0.5]
    }
}

fn render(proto: &Prototype, shift: &Shift, size: usize, noise_std: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let s = size as f64;
    let (tx, ty) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
    let mut layers: Vec<(f64, f64, f64, f64, [f64; 3])> = proto
        .gratings
        .iter()
        .map(|g| {
            let theta = g.orientation + rng.random_range(-ORIENTATION_JITTER..ORIENTATION_JITTER);
            let amp = g.amplitude * rng.random_range(0.6..1.4);
            (g.freq * shift.freq_scale, theta, amp, rng.random_range(0.0..2.0 * PI), shift.color(g.color))
        })
        .collect();
    let d = random_grating(rng);
    layers.push((
        d.freq * shift.freq_scale,
        d.orientation,
        d.amplitude * DISTRACTOR_AMPLITUDE,
        rng.random_range(0.0..2.0 * PI),
        shift.color(d.color),
    ));
    let bg = shift.background(proto.background);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let mut out = vec![0u8; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + tx, y as f64 + ty);
            let mut rgb = bg;
            for &(freq, theta, amp, phase, color) in &layers {
                let arg = 2.0 * PI * freq * (px * theta.cos() + py * theta.sin()) / s + phase;
                let v = 0.2 * amp * arg.sin();
                for ch in 0..3 {
                    rgb[ch] += v * color[ch];
                }
            }
            for ch in 0..3 {
                let n = if noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                let v = (rgb[ch] + n).clamp(0.0, 1.0);
                out[(ch * size + y) * size + x] = (v * 255.0).round() as u8;
            }
        }
    }
    out
}

fn split(params: &SyntheticDomainParams, name: &str, split: &str, per_class: usize) -> Vec<Sample> {
    let shift = Shift::new(params.shift_seed);
    let mut out = Vec::with_capacity(per_class * params.num_classes);
    for class in 0..params.num_classes {
        let proto = prototype(params.prototype_seed, class);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed([
            "synthetic-sample".to_string(),
            params.sample_seed.to_string(),
            params.shift_seed.to_string(),
            split.to_string(),
            class.to_string(),
        ]));
        for i in 0..per_class {
            out.push(Sample {
                id: format!("{name}/{split}/c{class:03}/{i:05}"),
                label: class as u32,
                image: render(&proto, &shift, params.image_size, params.noise_std, &mut rng),
            });
        }
    }
    out
}

/// Renders a synthetic domain. Identical params give pixel-identical data.
pub fn make_synthetic_domain(params: &SyntheticDomainParams) -> Result<Domain> {
    params.validate()?;
    let name = format!("synthetic-s{}", params.shift_seed);
    let spec = DomainSpec {
        name: name.clone(),
        num_classes: params.num_classes,
        train_per_class: params.train_per_class,
        source: DomainSource::Synthetic {
            test_per_class: params.test_per_class,
            shift_seed: params.shift_seed,
            noise_std: params.noise_std,
            prototype_seed: params.prototype_seed,
        },
        image_size: params.image_size,
        resize_method: ResizeMethod::Bicubic,
        class_subset_seed: 0,
        sample_subset_seed: params.sample_seed,
    };
    Ok(Domain {
        spec,
        task_label: 0,
        class_names: (0..params.num_classes).map(|c| format!("c{c:03}")).collect(),
        train: split(params, &name, "train", params.train_per_class),
        test: split(params, &name, "test", params.test_per_class),
    })
}
