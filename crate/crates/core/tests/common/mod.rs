//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mdllens::data::{make_synthetic_domain, Domain, SyntheticDomainParams};
use mdllens::metrics::{PredictionLog, PredictionRecord};
use mdllens::model::{MdlModel, WidthConfig};
use mdllens::nn::{Float, Tensor};
use mdllens::train::{backward_step, step_losses};
use mdllens::weighting::{UncertaintyState, Weighting, WeightingState};
use mdllens::similarity::RepresentationMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Four-cell contingency of (baseline correct?, MDL correct?) per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cells {
    pub both: i64,
    pub lost: i64,
    pub gained: i64,
    pub neither: i64,
}

pub fn four_cells(baseline: &PredictionLog, mdl: &PredictionLog) -> Cells {
    let treated: BTreeMap<&str, bool> = mdl.records.iter().map(|r| (r.sample_id.as_str(), r.true_label == r.pred_label)).collect();
    let mut c = Cells::default();
    for r in &baseline.records {
        match (r.true_label == r.pred_label, treated[r.sample_id.as_str()]) {
            (true, true) => c.both += 1,
            (true, false) => c.lost += 1,
            (false, true) => c.gained += 1,
            (false, false) => c.neither += 1,
        }
    }
    c
}

/// (PerfGain, Transfer, Interference) straight from the cells.
pub fn brute_force_scores(c: Cells) -> (f64, f64, f64) {
    let n = c.both + c.lost + c.gained + c.neither;
    let perfgain = 100.0 * (c.gained - c.lost) as f64 / n as f64;
    let transfer = 100.0 * c.gained as f64 / (c.gained + c.neither) as f64;
    let interference = 100.0 * c.lost as f64 / (c.both + c.lost) as f64;
    (perfgain, transfer, interference)
}

/// A random (baseline, MDL) pair over the same samples, with the MDL model
/// agreeing with the baseline at rate `agree`.
pub fn random_log_pair(r: &mut impl Rng, n: usize, classes: u32, agree: f64) -> (PredictionLog, PredictionLog) {
    let mut base = Vec::with_capacity(n);
    let mut mdl = Vec::with_capacity(n);
    for i in 0..n {
        let truth = r.random_range(0..classes);
        let bp = r.random_range(0..classes);
        let mp = if r.random_bool(agree) { bp } else { r.random_range(0..classes) };
        let id = format!("s{i:05}");
        base.push(PredictionRecord { sample_id: id.clone(), true_label: truth, pred_label: bp });
        mdl.push(PredictionRecord { sample_id: id, true_label: truth, pred_label: mp });
    }
    (PredictionLog::new("base", "d", base).unwrap(), PredictionLog::new("mdl", "d", mdl).unwrap())
}

pub fn gaussian_matrix(r: &mut impl Rng, n: usize, d: usize) -> Vec<f64> {
    (0..n * d).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

pub fn reps(id: &str, n: usize, d: usize, features: Vec<f64>) -> RepresentationMatrix {
    RepresentationMatrix::new(id, (0..n).map(|i| format!("p{i:04}")).collect(), d, features).unwrap()
}

/// Random orthogonal `d × d` matrix (Gram-Schmidt on a Gaussian matrix).
pub fn random_orthogonal(r: &mut impl Rng, d: usize) -> Vec<f64> {
    let mut q = gaussian_matrix(r, d, d);
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = (0..d).map(|k| q[i * d + k] * q[j * d + k]).sum();
            for k in 0..d {
                q[i * d + k] -= dot * q[j * d + k];
            }
        }
        let norm: f64 = (0..d).map(|k| q[i * d + k].powi(2)).sum::<f64>().sqrt();
        for k in 0..d {
            q[i * d + k] /= norm;
        }
    }
    q
}

/// Row-major `(n × d)(d × e)`.
pub fn matmul(a: &[f64], n: usize, d: usize, b: &[f64], e: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * e];
    for i in 0..n {
        for k in 0..d {
            for j in 0..e {
                out[i * e + j] += a[i * d + k] * b[k * e + j];
            }
        }
    }
    out
}

/// `tr(K H L H)` with `K = XXᵀ`, `L = YYᵀ`, `H = I − 11ᵀ/n`.
fn hsic(x: &[f64], dx: usize, y: &[f64], dy: usize, n: usize) -> f64 {
    let gram = |m: &[f64], d: usize| {
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = (0..d).map(|k| m[i * d + k] * m[j * d + k]).sum();
            }
        }
        // H G H
        let row_mean: Vec<f64> = (0..n).map(|i| (0..n).map(|j| g[i * n + j]).sum::<f64>() / n as f64).collect();
        let col_mean: Vec<f64> = (0..n).map(|j| (0..n).map(|i| g[i * n + j]).sum::<f64>() / n as f64).collect();
        let all = row_mean.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] += all - row_mean[i] - col_mean[j];
            }
        }
        g
    };
    let (k, l) = (gram(x, dx), gram(y, dy));
    // tr(K̃ L̃) for symmetric matrices
    k.iter().zip(&l).map(|(a, b)| a * b).sum()
}

pub fn cka_gram_oracle(x: &[f64], dx: usize, y: &[f64], dy: usize, n: usize) -> f64 {
    hsic(x, dx, y, dy, n) / (hsic(x, dx, x, dx, n) * hsic(y, dy, y, dy, n)).sqrt()
}

/// `Γ(ν/2)` for positive integer ν via factorials and the half-integer
/// product, no shared code with the crate.
fn gamma_half(nu: u32) -> f64 {
    if nu % 2 == 0 {
        (1..nu / 2).map(f64::from).product()
    } else {
        // Γ(m + 1/2) = √π · Π_{i=1..m} (i − 1/2)
        let m = (nu - 1) / 2;
        std::f64::consts::PI.sqrt() * (1..=m).map(|i| f64::from(i) - 0.5).product::<f64>()
    }
}

pub fn t_pdf(t: f64, nu: u32) -> f64 {
    let v = f64::from(nu);
    gamma_half(nu + 1) / ((v * std::f64::consts::PI).sqrt() * gamma_half(nu)) * (1.0 + t * t / v).powf(-(v + 1.0) / 2.0)
}

/// Student-t CDF by composite Simpson integration of the density from 0.
pub fn t_cdf_simpson(t: f64, nu: u32, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = t.abs() / n as f64;
    let mut s = t_pdf(0.0, nu) + t_pdf(t.abs(), nu);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * t_pdf(i as f64 * h, nu);
    }
    let half = s * h / 3.0;
    if t >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Textbook two-pass Pearson r.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn synthetic(classes: usize, train: usize, test: usize, shift: u64, size: usize) -> Domain {
    let mut p = SyntheticDomainParams::new(classes, train, test, shift);
    p.image_size = size;
    make_synthetic_domain(&p).unwrap()
}

/// A small grid over `domains` synthetic 4-class domains at 8px.
pub fn tiny_grid(out_dir: &std::path::Path, domains: usize, widths: &[f64], trials: u32, transfer: bool) -> mdllens::grid::ExperimentConfig {
    let names: Vec<String> = (0..domains).map(|i| ((b'a' + i as u8) as char).to_string()).collect();
    let specs: Vec<serde_json::Value> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            serde_json::json!({"name": n, "num_classes": 4, "train_per_class": 8, "image_size": 8,
                "source": {"kind": "synthetic", "test_per_class": 5, "shift_seed": i}})
        })
        .collect();
    let pairings: Vec<Vec<String>> =
        (0..domains).flat_map(|i| (i + 1..domains).map(move |j| (i, j))).map(|(i, j)| vec![names[i].clone(), names[j].clone()]).collect();
    let v = serde_json::json!({
        "domains": specs,
        "widths": widths,
        "pairings": pairings,
        "trials": trials,
        "train": {"batch_size": 16, "lr": 0.025, "single_epochs": 2, "joint_epochs": 2, "finetune_epochs": 1},
        "arms": {"mdl": true, "transfer_learning": transfer},
        "probe": {"per_class": 2},
        "out_dir": out_dir,
    });
    mdllens::grid::ExperimentConfig::from_json(&v.to_string()).unwrap()
}

/// Relative path → bytes for every file under `dir`.
pub fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &std::path::Path, dir: &std::path::Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn input(n: usize, size: usize, seed: usize) -> Tensor<f64> {
    let data = (0..n * 3 * size * size).map(|i| (((i + seed) * 7919) % 101) as f64 / 101.0 - 0.5).collect();
    Tensor::from_vec(n, 3, size, size, data)
}

pub fn two_head_model<F: Float>(seed: u64) -> MdlModel<F> {
    MdlModel::new(WidthConfig::new(0.25).unwrap(), &BTreeMap::from([(0, 4), (1, 3)]), 8, seed).unwrap()
}

/// Central differences of `step_losses` on the f64 model against the
/// analytic gradient of the weighted joint loss. Returns the number of
/// coordinates checked and the worst relative error.
pub fn gradient_check(kind: Weighting) -> (usize, f64) {
    let tasks = BTreeSet::from([0, 1]);
    let fresh = || match kind {
        Weighting::Uncertainty => {
            let mut u = UncertaintyState::new(&tasks);
            u.log_var.insert(1, 0.7);
            WeightingState::Uncertainty(u)
        }
        k => WeightingState::new(k, &tasks),
    };
    let mut model = two_head_model::<f64>(9);
    let x = input(6, 8, 5);
    let labels = vec![0, 2, 1, 3, 0, 2];
    let task_of = vec![0, 1, 0, 0, 1, 1];
    model.zero_grad();
    backward_step(&mut model, x.clone(), &labels, &task_of, &mut fresh()).unwrap();
    let grads: Vec<(String, Vec<f64>)> = model.params().into_iter().map(|(n, p)| (n, p.grad.clone())).collect();
    let h = 1e-6;
    let (mut checked, mut worst) = (0, 0.0f64);
    for (pi, (_, g)) in grads.iter().enumerate() {
        // a few coordinates of every tensor
        for &j in &[0, g.len() / 2, g.len() - 1] {
            let loss_at = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[pi].1.value[j] += delta;
                step_losses(&m, &x, &labels, &task_of, &mut fresh()).unwrap().total
            };
            let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let scale = fd.abs().max(g[j].abs()).max(1e-4);
            worst = worst.max((fd - g[j]).abs() / scale);
            checked += 1;
        }
    }
    (checked, worst)
}
