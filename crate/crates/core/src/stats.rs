//! Pearson correlation, paired t-tests, least-squares fits and the
//! Student-t distribution they rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(T ≤ t)` for Student's t with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value `P(|T| ≥ |t|)`.
pub fn two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    /// `r` for correlations, `t` for t-tests.
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
    pub n: usize,
    pub significant_at_95: bool,
}

impl StatResult {
    fn new(statistic: f64, p_value: f64, dof: usize, n: usize) -> Self {
        Self { statistic, p_value, dof, n, significant_at_95: p_value < 0.05 }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::invalid(format!("need at least {min} observations, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite observation"));
    }
    Ok(())
}

/// Product-moment correlation with a two-sided p-value from
/// `t = r √((n−2)/(1−r²))`, `n − 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<StatResult> {
    check_pair(x, y, 3)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant series".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let n = x.len();
    let dof = n - 2;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        two_sided_p(r * (dof as f64 / (1.0 - r * r)).sqrt(), dof as f64)
    };
    Ok(StatResult::new(r, p, dof, n))
}

/// One-sample t-test on `a − b`. All-zero differences give `t = 0, p = 1`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<StatResult> {
    check_pair(a, b, 2)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let dof = n - 1;
    if d.iter().all(|&v| v == 0.0) {
        return Ok(StatResult::new(0.0, 1.0, dof, n));
    }
    let m = mean(&d);
    let sd = (d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / dof as f64).sqrt();
    let t = if sd == 0.0 { m.signum() * f64::INFINITY } else { m / (sd / (n as f64).sqrt()) };
    Ok(StatResult::new(t, two_sided_p(t, dof as f64), dof, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("linear fit with constant x".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(FitResult { slope, intercept, r_squared })
}

/// Successive differences of a series ordered by strictly increasing width.
pub fn delta_by_capacity(series: &[(f64, f64)]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::invalid("need at least two widths"));
    }
    if series.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::invalid("widths must be strictly increasing"));
    }
    Ok(series.windows(2).map(|w| w[1].1 - w[0].1).collect())
}

/// Mean of absolute values; `None` for an empty slice.
pub fn mean_abs(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gamma_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn t_cdf_closed_forms() {
        // dof 1 is Cauchy, dof 2 has a closed form
        for &t in &[-3.0, -0.5, 0.0, 0.7, 2.0, 9.0] {
            let cauchy = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - cauchy).abs() < 1e-13, "t = {t}");
            let two = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((student_t_cdf(t, 2.0) - two).abs() < 1e-13, "t = {t}");
        }
    }

    #[test]
    fn worked_examples() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r.statistic - 0.8).abs() < 1e-12);
        assert!((r.p_value - 0.104_088_039).abs() < 1e-6);
        let t = paired_ttest(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((t.statistic - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(t.dof, 2);
        assert!((t.p_value - 0.074_179_900).abs() < 1e-6);
        let f = linear_fit(&[0.0, 1.0, 2.0], &[0.0, 0.0, 3.0]).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12 && (f.intercept + 0.5).abs() < 1e-12);
        assert!((f.r_squared - 0.75).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(paired_ttest(&[1.0, 2.0], &[1.0, 2.0]).unwrap().p_value, 1.0);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(linear_fit(&[2.0, 2.0], &[1.0, 3.0]).is_err());
        let r = pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap();
        assert_eq!((r.statistic, r.p_value), (-1.0, 0.0));
        assert_eq!(delta_by_capacity(&[(0.25, 10.0), (0.5, 14.0), (1.0, 15.0)]).unwrap(), vec![4.0, 1.0]);
        assert!(delta_by_capacity(&[(1.0, 1.0), (0.5, 2.0)]).is_err());
        assert_eq!(mean_abs(&[2.0, -4.0, 6.0]), Some(4.0));
    }

    proptest! {
        #[test]
        fn pearson_symmetry_and_affine_invariance(
            xy in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
            a in 0.1f64..10.0, b in -50.0f64..50.0
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            if let (Ok(r1), Ok(r2)) = (pearson(&x, &y), pearson(&y, &x)) {
                prop_assert!((r1.statistic - r2.statistic).abs() < 1e-12);
                let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let r3 = pearson(&xs, &y).unwrap();
                prop_assert!((r3.statistic - r1.statistic).abs() < 1e-9);
                let xn: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
                let r4 = pearson(&xn, &y).unwrap();
                prop_assert!((r4.statistic + r1.statistic).abs() < 1e-9);
                let f = linear_fit(&x, &y).unwrap();
                prop_assert!((f.r_squared - r1.statistic * r1.statistic).abs() < 1e-9);
            }
        }

        #[test]
        fn ttest_antisymmetric_and_p_monotone(
            ab in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..20),
            t1 in 0.0f64..10.0, dt in 0.01f64..5.0, dof in 1usize..30
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = ab.into_iter().unzip();
            let x = paired_ttest(&a, &b).unwrap();
            let y = paired_ttest(&b, &a).unwrap();
            prop_assert_eq!(x.statistic, -y.statistic);
            prop_assert_eq!(x.p_value, y.p_value);
            prop_assert!(two_sided_p(t1, dof as f64) > two_sided_p(t1 + dt, dof as f64));
        }
    }
}
