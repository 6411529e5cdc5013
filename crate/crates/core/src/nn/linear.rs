//! Fully connected classifier layer and the pooling / loss pieces around it.

use super::tensor::{gemm, Float, Param, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param<F>,
    pub bias: Param<F>,
}

impl<F: Float> Linear<F> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::filled(vec![out_features, in_features], F::zero()),
            bias: Param::filled(vec![out_features], F::zero()),
        }
    }

    /// `x` is `rows × in`, row-major; returns `rows × out`.
    pub fn forward(&self, x: &[F], rows: usize) -> Vec<F> {
        let mut out = Vec::with_capacity(rows * self.out_features);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias.value);
        }
        if rows > 0 {
            gemm::nt(rows, self.in_features, self.out_features, x, &self.weight.value, F::one(), &mut out);
        }
        out
    }

    /// Accumulates parameter gradients and returns `dx` (`rows × in`).
    pub fn backward(&mut self, x: &[F], dout: &[F], rows: usize) -> Vec<F> {
        let mut dx = vec![F::zero(); rows * self.in_features];
        if rows == 0 {
            return dx;
        }
        // dW[o, i] += Σ_r dout[r, o] x[r, i]
        gemm::tn(self.out_features, rows, self.in_features, dout, x, F::one(), &mut self.weight.grad);
        for r in 0..rows {
            for o in 0..self.out_features {
                self.bias.grad[o] = self.bias.grad[o] + dout[r * self.out_features + o];
            }
        }
        gemm::nn(rows, self.out_features, self.in_features, dout, &self.weight.value, F::zero(), &mut dx);
        dx
    }
}

/// Global average pooling: `N×C×H×W → N×C`.
pub fn global_avg_pool<F: Float>(x: &Tensor<F>) -> Vec<F> {
    let hw = x.h * x.w;
    let inv = F::one() / F::from_usize(hw).unwrap();
    x.data.chunks(hw).map(|plane| plane.iter().copied().sum::<F>() * inv).collect()
}

pub fn global_avg_pool_backward<F: Float>(d: &[F], n: usize, c: usize, h: usize, w: usize) -> Tensor<F> {
    let hw = h * w;
    let inv = F::one() / F::from_usize(hw).unwrap();
    let mut out = Tensor::zeros(n, c, h, w);
    for (plane, &g) in out.data.chunks_mut(hw).zip(d) {
        plane.iter_mut().for_each(|v| *v = g * inv);
    }
    out
}

/// Softmax cross-entropy of one row of logits, with its gradient
/// `softmax − onehot` written to `grad`.
pub fn cross_entropy_row<F: Float>(logits: &[F], label: usize, grad: Option<&mut [F]>) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = logits.iter().map(|&v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    if let Some(grad) = grad {
        for (j, (g, &v)) in grad.iter_mut().zip(logits).enumerate() {
            let p = (v - log_z).exp();
            *g = if j == label { p - F::one() } else { p };
        }
    }
    log_z - logits[label]
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: Float>(row: &[F]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}
