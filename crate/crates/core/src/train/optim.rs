//! SGD with momentum and coupled L2 weight decay:
//! `g ← g + wd·θ`, `v ← μ·v + g` (`v ← g` on first use), `θ ← θ − lr·v`.

use std::collections::BTreeMap;

use crate::nn::{Float, Param};

#[derive(Debug, Clone)]
pub struct Sgd<F> {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Vec<F>>,
}

impl<F: Float> Sgd<F> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, buffers: BTreeMap::new() }
    }

    /// Updates every parameter for which `active(name)` holds. Inactive
    /// parameters keep both their value and momentum buffer.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Param<F>)>,
        lr: f64,
        active: impl Fn(&str) -> bool,
    ) {
        let (mu, wd, lr) = (F::from_f64_lossy(self.momentum), F::from_f64_lossy(self.weight_decay), F::from_f64_lossy(lr));
        for (name, p) in params {
            if !active(&name) {
                continue;
            }
            let fresh = !self.buffers.contains_key(&name);
            let buf = self.buffers.entry(name).or_insert_with(|| vec![F::zero(); p.value.len()]);
            for ((v, &g), b) in p.value.iter_mut().zip(&p.grad).zip(buf.iter_mut()) {
                let d = g + wd * *v;
                *b = if fresh { d } else { mu * *b + d };
                *v = *v - lr * *b;
            }
        }
    }
}

/// The same rule for named scalars (no weight decay).
#[derive(Debug, Clone, Default)]
pub struct ScalarSgd {
    pub momentum: f64,
    buffers: BTreeMap<u32, f64>,
}

impl ScalarSgd {
    pub fn new(momentum: f64) -> Self {
        Self { momentum, buffers: BTreeMap::new() }
    }

    pub fn step(&mut self, values: &mut BTreeMap<u32, f64>, grads: &BTreeMap<u32, f64>, lr: f64) {
        for (k, g) in grads {
            let Some(v) = values.get_mut(k) else { continue };
            let b = match self.buffers.get(k) {
                Some(&b) => self.momentum * b + g,
                None => *g,
            };
            self.buffers.insert(*k, b);
            *v -= lr * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_rolled_momentum() {
        let mut p = Param::<f64>::new(vec![2], vec![1.0, -2.0]);
        let mut opt = Sgd::new(0.9, 0.1);
        p.grad = vec![0.5, 0.5];
        opt.step([("w".to_string(), &mut p)], 0.1, |_| true);
        // d = g + 0.1·θ = [0.6, 0.3]; θ = θ − 0.1·d
        assert!((p.value[0] - 0.94).abs() < 1e-12 && (p.value[1] + 2.03).abs() < 1e-12);
        p.grad = vec![0.0, 0.0];
        opt.step([("w".to_string(), &mut p)], 0.1, |_| true);
        // v = 0.9·0.6 + 0.1·0.94
        assert!((p.value[0] - (0.94 - 0.1 * (0.54 + 0.094))).abs() < 1e-12);
    }

    #[test]
    fn inactive_parameters_untouched() {
        let mut p = Param::<f32>::new(vec![1], vec![1.0]);
        p.grad = vec![1.0];
        let mut opt = Sgd::new(0.9, 1e-4);
        opt.step([("heads.1.weight".to_string(), &mut p)], 0.1, |n| !n.starts_with("heads.1."));
        assert_eq!(p.value, vec![1.0]);
    }

    #[test]
    fn scalar_sgd() {
        let mut v = BTreeMap::from([(0, 1.0), (1, 0.0)]);
        let mut opt = ScalarSgd::new(0.5);
        opt.step(&mut v, &BTreeMap::from([(0, 1.0)]), 0.1);
        opt.step(&mut v, &BTreeMap::from([(0, 1.0)]), 0.1);
        assert!((v[&0] - (1.0 - 0.1 - 0.15)).abs() < 1e-12);
        assert_eq!(v[&1], 0.0);
    }
}
