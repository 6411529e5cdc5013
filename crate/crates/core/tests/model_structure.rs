mod common;

use std::collections::BTreeMap;

use common::{gradient_check, input, two_head_model};

use mdllens::model::{backbone_param_count, group_count, norm_groups, MdlModel, WidthConfig};
use mdllens::nn::Tensor;
use mdllens::weighting::Weighting;
use proptest::prelude::*;

const REFERENCE_COUNTS: [(f64, f64); 4] = [(0.25, 29e3), (0.5, 116e3), (1.0, 463e3), (2.0, 1848e3)];

#[test]
fn backbone_counts_within_ten_percent() {
    for (m, expected) in REFERENCE_COUNTS {
        let n = backbone_param_count(&WidthConfig::new(m).unwrap()) as f64;
        assert!((n - expected).abs() / expected <= 0.10, "{m}x: {n} vs {expected}");
    }
}

#[test]
fn heads_add_exactly_their_weights() {
    let w = WidthConfig::new(0.5).unwrap();
    let m = MdlModel::<f32>::new(w, &BTreeMap::from([(0, 10), (1, 7)]), 8, 0).unwrap();
    let d = w.feature_dim();
    assert_eq!(m.param_count(false), backbone_param_count(&w));
    assert_eq!(m.param_count(true), backbone_param_count(&w) + (d + 1) * 17);
}

#[test]
fn group_count_matches_formula() {
    for k in [1, 2, 4, 8, 16, 32] {
        for c in 1..=256usize {
            let formula = 32.min(c / k).max(1);
            assert_eq!(group_count(c, k), formula, "c={c}, k={k}");
            let g = norm_groups(c, k);
            assert!(g <= formula && c % g == 0);
        }
    }
}

#[test]
fn every_norm_site_partitions_its_channels() {
    for m in [0.25, 0.5, 1.0, 2.0] {
        let model = MdlModel::<f32>::new(WidthConfig::new(m).unwrap(), &BTreeMap::from([(0, 2)]), 8, 0).unwrap();
        for (c, g) in model.norm_sites() {
            assert_eq!(g, norm_groups(c, 2));
            assert_eq!(c % g, 0);
        }
    }
}

#[test]
fn perturbing_one_head_leaves_the_other_untouched() {
    let model = two_head_model::<f64>(3);
    let x = input(5, 8, 1);
    let before = model.forward(&x).unwrap();
    let mut perturbed = model.clone();
    for (name, p) in perturbed.params_mut() {
        if name.starts_with("heads.1.") {
            p.value.iter_mut().for_each(|v| *v += 0.37);
        }
    }
    let after = perturbed.forward(&x).unwrap();
    assert_eq!(before.logits[&0], after.logits[&0]);
    assert_eq!(before.features, after.features);
    assert_ne!(before.logits[&1], after.logits[&1]);
}

#[test]
fn loss_on_one_head_gives_zero_gradient_elsewhere() {
    let mut model = two_head_model::<f64>(4);
    let (out, cache) = model.forward_train(input(6, 8, 2)).unwrap();
    let d: Vec<f64> = out.logits[&0].iter().map(|v| v.sin()).collect();
    model.zero_grad();
    model.backward(cache, &BTreeMap::from([(0, d)])).unwrap();
    for (name, p) in model.params() {
        let nonzero = p.grad.iter().any(|&g| g != 0.0);
        if name.starts_with("heads.1.") {
            assert!(!nonzero, "{name}");
        }
        if name.starts_with("heads.0.") {
            assert!(nonzero, "{name}");
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for kind in [Weighting::Uniform, Weighting::Uncertainty, Weighting::Cov] {
        let (checked, worst) = gradient_check(kind);
        assert!(checked > 100);
        assert!(worst < 1e-3, "{kind}: worst relative error {worst}");
    }
}

#[test]
fn forward_is_batch_invariant() {
    let model = two_head_model::<f32>(2);
    let x = input(7, 8, 3);
    let xf = Tensor::from_vec(7, 3, 8, 8, x.data.iter().map(|&v| v as f32).collect());
    let whole = model.forward(&xf).unwrap();
    for i in 0..7 {
        let one = Tensor::from_vec(1, 3, 8, 8, xf.sample(i).to_vec());
        let out = model.forward(&one).unwrap();
        for (a, b) in out.feature_row(0).iter().zip(whole.feature_row(i)) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn feature_dim_depends_only_on_width(m in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0]), size in prop::sample::select(vec![4usize, 8, 12])) {
        let w = WidthConfig::new(m).unwrap();
        let model = MdlModel::<f32>::new(w, &BTreeMap::from([(0, 3)]), size, 1).unwrap();
        let x = Tensor::from_vec(2, 3, size, size, vec![0.25; 2 * 3 * size * size]);
        let out = model.forward(&x).unwrap();
        prop_assert_eq!(out.feature_dim, w.feature_dim());
        prop_assert_eq!(out.features.len(), 2 * w.feature_dim());
        prop_assert!(out.features.iter().all(|v| v.is_finite()));
    }
}
