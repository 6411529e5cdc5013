//! Per-task loss weights λ_t for the joint objective `Σ_t λ_t L_t`.
//!
//! * Uniform: λ_t = 1.
//! * Uncertainty: λ_t = 1/ε_t² with learnable `s_t = ln ε_t²`, plus the
//!   regularizer `Σ_t ln(1 + ε_t²)`.
//! * CoV: λ_t ∝ coefficient of variation of the loss ratio `L_t / μ_t`
//!   over the whole history, normalized to sum to one and scaled by T.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskId;

pub type Weights = BTreeMap<TaskId, f64>;

pub const DEFAULT_COV_WARMUP: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Uniform,
    Uncertainty,
    Cov,
}

impl Weighting {
    pub const ALL: [Weighting; 3] = [Weighting::Uniform, Weighting::Uncertainty, Weighting::Cov];

    pub fn as_str(&self) -> &'static str {
        match self {
            Weighting::Uniform => "uniform",
            Weighting::Uncertainty => "uncertainty",
            Weighting::Cov => "cov",
        }
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Weighting::Uniform),
            "uncertainty" => Ok(Weighting::Uncertainty),
            "cov" => Ok(Weighting::Cov),
            other => Err(Error::invalid(format!("unknown weighting `{other}`"))),
        }
    }
}

/// Mean cross-entropy per task present in the current batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskLossVector {
    pub values: BTreeMap<TaskId, f64>,
}

impl TaskLossVector {
    pub fn new(values: BTreeMap<TaskId, f64>) -> Result<Self> {
        if let Some((t, v)) = values.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("loss for task {t} is {v}")));
        }
        Ok(Self { values })
    }

    pub fn present_tasks(&self) -> BTreeSet<TaskId> {
        self.values.keys().copied().collect()
    }
}

pub fn uniform_weights(tasks: &BTreeSet<TaskId>) -> Weights {
    tasks.iter().map(|&t| (t, 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyState {
    /// `s_t = ln ε_t²`, initialized at 0 (weights start at 1).
    pub log_var: BTreeMap<TaskId, f64>,
}

impl UncertaintyState {
    pub fn new(tasks: &BTreeSet<TaskId>) -> Self {
        Self { log_var: tasks.iter().map(|&t| (t, 0.0)).collect() }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(λ_t = e^{-s_t}, Σ_t ln(1 + e^{s_t}))`.
pub fn uncertainty_weights(state: &UncertaintyState) -> (Weights, f64) {
    let weights = state.log_var.iter().map(|(&t, &s)| (t, (-s).exp())).collect();
    let reg = state.log_var.values().map(|&s| softplus(s)).sum();
    (weights, reg)
}

/// ∂regularizer/∂s_t = σ(s_t).
pub fn uncertainty_regularizer_grad(state: &UncertaintyState) -> BTreeMap<TaskId, f64> {
    state.log_var.iter().map(|(&t, &s)| (t, sigmoid(s))).collect()
}

/// Gradient of `Σ_{t present} e^{-s_t} L_t + Σ_t ln(1 + e^{s_t})` w.r.t. `s`.
pub fn uncertainty_objective_grad(state: &UncertaintyState, losses: &TaskLossVector) -> BTreeMap<TaskId, f64> {
    let mut g = uncertainty_regularizer_grad(state);
    for (t, l) in &losses.values {
        if let (Some(gt), Some(s)) = (g.get_mut(t), state.log_var.get(t)) {
            *gt -= (-s).exp() * l;
        }
    }
    g
}

/// Single-pass running statistics for one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovTaskStats {
    pub count: u64,
    pub mean_loss: f64,
    pub mean_ratio: f64,
    /// Sum of squared deviations of the loss ratio (Welford's M2).
    pub m2_ratio: f64,
}

impl CovTaskStats {
    fn update(&mut self, loss: f64) {
        self.count += 1;
        let n = self.count as f64;
        self.mean_loss += (loss - self.mean_loss) / n;
        let ratio = if self.mean_loss > 0.0 { loss / self.mean_loss } else { 1.0 };
        let delta = ratio - self.mean_ratio;
        self.mean_ratio += delta / n;
        self.m2_ratio += delta * (ratio - self.mean_ratio);
    }

    pub fn std_ratio(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2_ratio / self.count as f64).max(0.0).sqrt()
        }
    }

    /// `std(ℓ) / mean(ℓ)`; zero before any update.
    pub fn coefficient_of_variation(&self) -> f64 {
        if self.count == 0 || self.mean_ratio <= 0.0 {
            0.0
        } else {
            self.std_ratio() / self.mean_ratio
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovHistory {
    pub tasks: BTreeMap<TaskId, CovTaskStats>,
    pub warmup_steps: u64,
}

impl CovHistory {
    pub fn new(tasks: &BTreeSet<TaskId>, warmup_steps: u64) -> Self {
        Self { tasks: tasks.iter().map(|&t| (t, CovTaskStats::default())).collect(), warmup_steps }
    }

    pub fn in_warmup(&self) -> bool {
        self.tasks.values().any(|s| s.count <= self.warmup_steps)
    }

    /// Weights implied by the current statistics.
    pub fn weights(&self) -> Weights {
        let all: BTreeSet<TaskId> = self.tasks.keys().copied().collect();
        if self.in_warmup() {
            return uniform_weights(&all);
        }
        let c: BTreeMap<TaskId, f64> = self.tasks.iter().map(|(&t, s)| (t, s.coefficient_of_variation())).collect();
        cov_weights_from_coefficients(&c).unwrap_or_else(|| uniform_weights(&all))
    }
}

/// `T · c_t / Σ_u c_u`; `None` when the sum is zero or not finite.
pub fn cov_weights_from_coefficients(c: &BTreeMap<TaskId, f64>) -> Option<Weights> {
    let sum: f64 = c.values().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return None;
    }
    let t = c.len() as f64;
    Some(c.iter().map(|(&k, &v)| (k, t * v / sum)).collect())
}

/// Folds the present tasks' losses into the history, then returns weights
/// for every tracked task. Absent tasks keep their statistics.
pub fn cov_update(history: &mut CovHistory, losses: &TaskLossVector) -> Weights {
    for (t, &l) in &losses.values {
        if l.is_finite() {
            history.tasks.entry(*t).or_default().update(l);
        }
    }
    history.weights()
}

/// Weights for one optimizer step plus any additive regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct StepWeights {
    pub lambda: Weights,
    pub regularizer: f64,
}

/// Weighting state owned by a training loop; every scheme is driven
/// through the same calls.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightingState {
    Uniform(BTreeSet<TaskId>),
    Uncertainty(UncertaintyState),
    Cov(CovHistory),
}

impl WeightingState {
    pub fn new(kind: Weighting, tasks: &BTreeSet<TaskId>) -> Self {
        match kind {
            Weighting::Uniform => WeightingState::Uniform(tasks.clone()),
            Weighting::Uncertainty => WeightingState::Uncertainty(UncertaintyState::new(tasks)),
            Weighting::Cov => WeightingState::Cov(CovHistory::new(tasks, DEFAULT_COV_WARMUP)),
        }
    }

    pub fn kind(&self) -> Weighting {
        match self {
            WeightingState::Uniform(_) => Weighting::Uniform,
            WeightingState::Uncertainty(_) => Weighting::Uncertainty,
            WeightingState::Cov(_) => Weighting::Cov,
        }
    }

    /// Weights for the current batch. CoV folds `losses` into its history.
    pub fn step(&mut self, losses: &TaskLossVector) -> StepWeights {
        match self {
            WeightingState::Uniform(tasks) => StepWeights { lambda: uniform_weights(tasks), regularizer: 0.0 },
            WeightingState::Uncertainty(state) => {
                let (lambda, regularizer) = uncertainty_weights(state);
                StepWeights { lambda, regularizer }
            }
            WeightingState::Cov(h) => StepWeights { lambda: cov_update(h, losses), regularizer: 0.0 },
        }
    }

    /// Weights from the frozen state, without consuming a batch.
    pub fn current(&self) -> StepWeights {
        match self {
            WeightingState::Uniform(tasks) => StepWeights { lambda: uniform_weights(tasks), regularizer: 0.0 },
            WeightingState::Uncertainty(state) => {
                let (lambda, regularizer) = uncertainty_weights(state);
                StepWeights { lambda, regularizer }
            }
            WeightingState::Cov(h) => StepWeights { lambda: h.weights(), regularizer: 0.0 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tasks(n: u32) -> BTreeSet<TaskId> {
        (0..n).collect()
    }

    #[test]
    fn uniform_is_all_ones() {
        assert_eq!(uniform_weights(&tasks(2)), BTreeMap::from([(0, 1.0), (1, 1.0)]));
        assert_eq!(uniform_weights(&tasks(1)), BTreeMap::from([(0, 1.0)]));
        assert_eq!(uniform_weights(&tasks(3)).values().sum::<f64>(), 3.0);
    }

    #[test]
    fn uncertainty_closed_forms() {
        let mut st = UncertaintyState::new(&tasks(2));
        let (w, r) = uncertainty_weights(&st);
        assert_eq!(w, BTreeMap::from([(0, 1.0), (1, 1.0)]));
        assert!((r - 2.0 * 2f64.ln()).abs() < 1e-12);

        st.log_var.insert(1, 4f64.ln());
        let (w, r) = uncertainty_weights(&st);
        assert!((w[&0] - 1.0).abs() < 1e-12 && (w[&1] - 0.25).abs() < 1e-12);
        assert!((r - (2f64.ln() + 5f64.ln())).abs() < 1e-12);

        st.log_var.insert(0, 800.0);
        let (w, r) = uncertainty_weights(&st);
        assert!(w[&0] < 1e-300 && r.is_finite());
    }

    #[test]
    fn uncertainty_objective_has_interior_minimum() {
        // e^{-s} L + ln(1 + e^s) is stationary where e^s = (L + √(L² + 4L)) / 2
        for l in [0.1f64, 1.0, 2.3, 10.0] {
            let s_star = ((l + (l * l + 4.0 * l).sqrt()) / 2.0f64).ln();
            let mut st = UncertaintyState::new(&tasks(1));
            st.log_var.insert(0, s_star);
            let losses = TaskLossVector::new(BTreeMap::from([(0, l)])).unwrap();
            assert!(uncertainty_objective_grad(&st, &losses)[&0].abs() < 1e-12);
            let f = |s: f64| (-s).exp() * l + softplus(s);
            assert!(f(s_star) < f(s_star - 0.5) && f(s_star) < f(s_star + 0.5));
        }
    }

    #[test]
    fn cov_constant_history_falls_back_to_uniform() {
        let mut h = CovHistory::new(&tasks(2), 3);
        let losses = TaskLossVector::new(BTreeMap::from([(0, 2.0), (1, 0.7)])).unwrap();
        for _ in 0..10 {
            let w = cov_update(&mut h, &losses);
            assert_eq!(w, BTreeMap::from([(0, 1.0), (1, 1.0)]));
        }
        assert!(!h.in_warmup());
    }

    #[test]
    fn cov_normalize_then_scale() {
        let c = BTreeMap::from([(0, 0.1), (1, 0.3)]);
        let w = cov_weights_from_coefficients(&c).unwrap();
        assert!((w[&0] - 0.5).abs() < 1e-12 && (w[&1] - 1.5).abs() < 1e-12);
        assert!(cov_weights_from_coefficients(&BTreeMap::from([(0, 0.0), (1, 0.0)])).is_none());
    }

    #[test]
    fn cov_absent_task_keeps_its_statistics() {
        let mut h = CovHistory::new(&tasks(2), 0);
        cov_update(&mut h, &TaskLossVector::new(BTreeMap::from([(0, 1.0), (1, 2.0)])).unwrap());
        let before = h.tasks[&1].clone();
        cov_update(&mut h, &TaskLossVector::new(BTreeMap::from([(0, 3.0)])).unwrap());
        assert_eq!(h.tasks[&1], before);
        assert_eq!(h.tasks[&0].count, 2);
    }

    #[test]
    fn welford_matches_two_pass_statistics() {
        let losses = [2.3, 2.1, 1.7, 1.9, 1.2, 1.4, 0.9];
        let mut s = CovTaskStats::default();
        let mut ratios = Vec::new();
        let mut sum = 0.0;
        for (i, &l) in losses.iter().enumerate() {
            s.update(l);
            sum += l;
            ratios.push(l / (sum / (i + 1) as f64));
        }
        let n = ratios.len() as f64;
        let m = ratios.iter().sum::<f64>() / n;
        let sd = (ratios.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / n).sqrt();
        assert!((s.mean_ratio - m).abs() < 1e-12);
        assert!((s.std_ratio() - sd).abs() < 1e-12);
        assert!((s.coefficient_of_variation() - sd / m).abs() < 1e-12);
    }

    #[test]
    fn weighting_names_roundtrip() {
        for w in Weighting::ALL {
            assert_eq!(w.as_str().parse::<Weighting>().unwrap(), w);
        }
        assert!("gradnorm".parse::<Weighting>().is_err());
    }

    proptest! {
        #[test]
        fn cov_weights_sum_to_task_count(
            seq in prop::collection::vec(prop::collection::vec(0.01f64..5.0, 3), 8..40)
        ) {
            let mut h = CovHistory::new(&tasks(3), 5);
            let mut last = BTreeMap::new();
            for row in &seq {
                let lv = TaskLossVector::new(row.iter().enumerate().map(|(i, &v)| (i as TaskId, v)).collect()).unwrap();
                last = cov_update(&mut h, &lv);
                prop_assert!(last.values().all(|&w| w >= 0.0));
            }
            prop_assert!((last.values().sum::<f64>() - 3.0).abs() < 1e-9);
        }

        #[test]
        fn cov_is_permutation_equivariant(
            seq in prop::collection::vec((0.01f64..5.0, 0.01f64..5.0), 6..30)
        ) {
            let mut a = CovHistory::new(&tasks(2), 2);
            let mut b = CovHistory::new(&tasks(2), 2);
            let (mut wa, mut wb) = (BTreeMap::new(), BTreeMap::new());
            for &(x, y) in &seq {
                wa = cov_update(&mut a, &TaskLossVector::new(BTreeMap::from([(0, x), (1, y)])).unwrap());
                wb = cov_update(&mut b, &TaskLossVector::new(BTreeMap::from([(0, y), (1, x)])).unwrap());
            }
            prop_assert!((wa[&0] - wb[&1]).abs() < 1e-12);
            prop_assert!((wa[&1] - wb[&0]).abs() < 1e-12);
        }

        #[test]
        fn uncertainty_weights_positive_and_regularizer_grad_matches_fd(
            s0 in -5.0f64..5.0, s1 in -5.0f64..5.0
        ) {
            let mut st = UncertaintyState::new(&tasks(2));
            st.log_var.insert(0, s0);
            st.log_var.insert(1, s1);
            let (w, _) = uncertainty_weights(&st);
            prop_assert!(w.values().all(|&v| v > 0.0));
            let g = uncertainty_regularizer_grad(&st);
            let h = 1e-6;
            for t in 0..2u32 {
                let mut p = st.clone();
                *p.log_var.get_mut(&t).unwrap() += h;
                let mut m = st.clone();
                *m.log_var.get_mut(&t).unwrap() -= h;
                let fd = (uncertainty_weights(&p).1 - uncertainty_weights(&m).1) / (2.0 * h);
                prop_assert!((fd - g[&t]).abs() < 1e-5);
            }
        }
    }
}
