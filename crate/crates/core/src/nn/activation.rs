//! Mish activation: `x · tanh(softplus(x))`.

use super::tensor::{Float, Tensor};

/// Above this, `tanh(softplus(x))` is 1 to working precision.
const LINEAR_FROM: f64 = 20.0;

/// `tanh(ln(1 + e^x)) = n / (n + 2)` with `n = e^x (e^x + 2)`; one `exp`.
#[inline]
fn tanh_softplus<F: Float>(e: F) -> F {
    let two = F::one() + F::one();
    let n = e * (e + two);
    n / (n + two)
}

#[inline]
pub fn mish<F: Float>(x: F) -> F {
    if x > F::from_f64_lossy(LINEAR_FROM) {
        return x;
    }
    x * tanh_softplus(x.exp())
}

/// d/dx mish(x) = tanh(sp) + x · sech²(sp) · σ(x)
#[inline]
pub fn mish_grad<F: Float>(x: F) -> F {
    if x > F::from_f64_lossy(LINEAR_FROM) {
        return F::one();
    }
    let e = x.exp();
    let t = tanh_softplus(e);
    let sigmoid = e / (F::one() + e);
    t + x * (F::one() - t * t) * sigmoid
}

pub fn mish_forward<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    Tensor { n: x.n, c: x.c, h: x.h, w: x.w, data: x.data.iter().map(|&v| mish(v)).collect() }
}

pub fn mish_backward<F: Float>(x: &Tensor<F>, dout: &Tensor<F>) -> Tensor<F> {
    let data = x.data.iter().zip(&dout.data).map(|(&v, &g)| g * mish_grad(v)).collect();
    Tensor { n: x.n, c: x.c, h: x.h, w: x.w, data }
}
