use std::collections::{BTreeMap, BTreeSet};

use mdllens::weighting::{
    cov_update, cov_weights_from_coefficients, uncertainty_objective_grad, uncertainty_regularizer_grad, uncertainty_weights,
    CovHistory, TaskLossVector, UncertaintyState, Weighting, WeightingState,
};
use proptest::prelude::*;

fn state(s: &[f64]) -> UncertaintyState {
    UncertaintyState { log_var: s.iter().enumerate().map(|(t, &v)| (t as u32, v)).collect() }
}

fn objective(u: &UncertaintyState, losses: &TaskLossVector) -> f64 {
    let (w, reg) = uncertainty_weights(u);
    losses.values.iter().map(|(t, l)| w[t] * l).sum::<f64>() + reg
}

proptest! {
    #[test]
    fn regularizer_gradient_matches_finite_differences(s in prop::collection::vec(-6f64..6.0, 1..5)) {
        let u = state(&s);
        let g = uncertainty_regularizer_grad(&u);
        let h = 1e-5;
        for t in 0..s.len() as u32 {
            let (mut up, mut dn) = (u.clone(), u.clone());
            *up.log_var.get_mut(&t).unwrap() += h;
            *dn.log_var.get_mut(&t).unwrap() -= h;
            let fd = (uncertainty_weights(&up).1 - uncertainty_weights(&dn).1) / (2.0 * h);
            prop_assert!((fd - g[&t]).abs() < 1e-5, "task {}: {} vs {}", t, fd, g[&t]);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences(
        s in prop::collection::vec(-3f64..3.0, 2..4),
        l in prop::collection::vec(0f64..5.0, 2..4),
    ) {
        let n = s.len().min(l.len());
        let u = state(&s[..n]);
        let losses = TaskLossVector::new(l[..n].iter().enumerate().map(|(t, &v)| (t as u32, v)).collect()).unwrap();
        let g = uncertainty_objective_grad(&u, &losses);
        let h = 1e-5;
        for t in 0..n as u32 {
            let (mut up, mut dn) = (u.clone(), u.clone());
            *up.log_var.get_mut(&t).unwrap() += h;
            *dn.log_var.get_mut(&t).unwrap() -= h;
            let fd = (objective(&up, &losses) - objective(&dn, &losses)) / (2.0 * h);
            prop_assert!((fd - g[&t]).abs() < 1e-5);
        }
    }

    #[test]
    fn cov_weights_sum_to_task_count(c in prop::collection::vec(0f64..5.0, 1..6)) {
        let coeffs: BTreeMap<u32, f64> = c.iter().enumerate().map(|(t, &v)| (t as u32, v)).collect();
        match cov_weights_from_coefficients(&coeffs) {
            Some(w) => prop_assert!((w.values().sum::<f64>() - c.len() as f64).abs() < 1e-9),
            None => prop_assert!(c.iter().sum::<f64>() == 0.0),
        }
    }

    #[test]
    fn cov_post_warmup_weights_sum_to_t(losses in prop::collection::vec((0.01f64..5.0, 0.01f64..5.0), 12..40)) {
        let tasks = BTreeSet::from([0, 1]);
        let mut h = CovHistory::new(&tasks, 10);
        let mut last = BTreeMap::new();
        for (a, b) in &losses {
            last = cov_update(&mut h, &TaskLossVector::new(BTreeMap::from([(0, *a), (1, *b)])).unwrap());
        }
        prop_assert!(!h.in_warmup());
        prop_assert!((last.values().sum::<f64>() - 2.0).abs() < 1e-9);
    }
}

#[test]
fn uniform_is_identically_one() {
    let tasks = BTreeSet::from([0, 3, 9]);
    let mut st = WeightingState::new(Weighting::Uniform, &tasks);
    for l in [0.1, 2.0, 7.5] {
        let w = st.step(&TaskLossVector::new(BTreeMap::from([(0, l), (3, 2.0 * l)])).unwrap());
        assert!(w.lambda.values().all(|&v| v == 1.0));
        assert_eq!(w.lambda.len(), 3);
        assert_eq!(w.regularizer, 0.0);
    }
}

#[test]
fn uncertainty_closed_forms() {
    let (w, r) = uncertainty_weights(&state(&[0.0, 0.0]));
    assert_eq!((w[&0], w[&1]), (1.0, 1.0));
    assert!((r - 2.0 * 2f64.ln()).abs() < 1e-9);
    let (w, r) = uncertainty_weights(&state(&[0.0, 4f64.ln()]));
    assert!((w[&1] - 0.25).abs() < 1e-9);
    assert!((r - (2f64.ln() + 5f64.ln())).abs() < 1e-9);
    let (w, _) = uncertainty_weights(&state(&[60.0]));
    assert!(w[&0] < 1e-20);
}

#[test]
fn cov_zero_variance_falls_back_to_uniform() {
    let tasks = BTreeSet::from([0, 1]);
    let mut h = CovHistory::new(&tasks, 3);
    let mut w = BTreeMap::new();
    for _ in 0..20 {
        w = cov_update(&mut h, &TaskLossVector::new(BTreeMap::from([(0, 1.5), (1, 0.7)])).unwrap());
    }
    assert_eq!(w, BTreeMap::from([(0, 1.0), (1, 1.0)]));
}
