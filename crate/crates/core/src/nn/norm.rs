//! Group normalization over `(channels / groups) × H × W` slices of each sample.

use super::tensor::{Float, Param, Tensor};

pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm<F> {
    pub channels: usize,
    pub groups: usize,
    pub weight: Param<F>,
    pub bias: Param<F>,
}

/// Per-(sample, group) statistics saved by the forward pass.
#[derive(Debug, Clone)]
pub struct GroupNormCache<F> {
    mean: Vec<F>,
    rstd: Vec<F>,
}

impl<F: Float> GroupNorm<F> {
    pub fn new(channels: usize, groups: usize) -> Self {
        assert!(groups >= 1 && channels % groups == 0, "{groups} groups do not partition {channels} channels");
        Self {
            channels,
            groups,
            weight: Param::filled(vec![channels], F::one()),
            bias: Param::filled(vec![channels], F::zero()),
        }
    }

    fn group_len(&self, hw: usize) -> usize {
        self.channels / self.groups * hw
    }

    pub fn forward(&self, x: &Tensor<F>) -> (Tensor<F>, GroupNormCache<F>) {
        assert_eq!(x.c, self.channels, "group norm channel mismatch");
        let hw = x.h * x.w;
        let glen = self.group_len(hw);
        let cpg = self.channels / self.groups;
        let eps = F::from_f64_lossy(GROUP_NORM_EPS);
        let inv_len = F::one() / F::from_usize(glen).unwrap();
        let mut out = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut mean = Vec::with_capacity(x.n * self.groups);
        let mut rstd = Vec::with_capacity(x.n * self.groups);
        for i in 0..x.n {
            let xs = x.sample(i);
            let os = out.sample_mut(i);
            for g in 0..self.groups {
                let slice = &xs[g * glen..(g + 1) * glen];
                let m = slice.iter().copied().sum::<F>() * inv_len;
                let var = slice.iter().map(|&v| (v - m) * (v - m)).sum::<F>() * inv_len;
                let r = F::one() / (var + eps).sqrt();
                mean.push(m);
                rstd.push(r);
                for cl in 0..cpg {
                    let c = g * cpg + cl;
                    let (gamma, beta) = (self.weight.value[c], self.bias.value[c]);
                    let base = c * hw;
                    for j in base..base + hw {
                        os[j] = (xs[j] - m) * r * gamma + beta;
                    }
                }
            }
        }
        (out, GroupNormCache { mean, rstd })
    }

    /// Accumulates affine gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<F>, cache: &GroupNormCache<F>, dout: &Tensor<F>) -> Tensor<F> {
        let hw = x.h * x.w;
        let glen = self.group_len(hw);
        let cpg = self.channels / self.groups;
        let inv_len = F::one() / F::from_usize(glen).unwrap();
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            let xs = x.sample(i);
            let gs = dout.sample(i);
            let dxs = dx.sample_mut(i);
            for g in 0..self.groups {
                let m = cache.mean[i * self.groups + g];
                let r = cache.rstd[i * self.groups + g];
                // Σ dxhat and Σ dxhat·xhat over the group
                let mut sum_d = F::zero();
                let mut sum_dx = F::zero();
                for cl in 0..cpg {
                    let c = g * cpg + cl;
                    let gamma = self.weight.value[c];
                    let mut dgamma = F::zero();
                    let mut dbeta = F::zero();
                    for j in c * hw..(c + 1) * hw {
                        let xhat = (xs[j] - m) * r;
                        dgamma = dgamma + gs[j] * xhat;
                        dbeta = dbeta + gs[j];
                        let d = gs[j] * gamma;
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * xhat;
                    }
                    self.weight.grad[c] = self.weight.grad[c] + dgamma;
                    self.bias.grad[c] = self.bias.grad[c] + dbeta;
                }
                let mean_d = sum_d * inv_len;
                let mean_dx = sum_dx * inv_len;
                for cl in 0..cpg {
                    let c = g * cpg + cl;
                    let gamma = self.weight.value[c];
                    for j in c * hw..(c + 1) * hw {
                        let xhat = (xs[j] - m) * r;
                        dxs[j] = r * (gs[j] * gamma - mean_d - xhat * mean_dx);
                    }
                }
            }
        }
        dx
    }
}
