//! 2-D convolution (no bias) lowered to GEMM through im2col.

use super::tensor::{gemm, Float, Param, Tensor};

const COL_BUDGET: usize = 1 << 21;

/// Output columns `[lo, hi)` whose input column `ox*stride - pad + kx` lies
/// inside `[0, w)`.
fn valid_range(ow: usize, w: usize, stride: usize, pad: usize, kx: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let hi = if w + pad > kx { ((w + pad - kx - 1) / stride + 1).min(ow) } else { 0 };
    (lo.min(hi), hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, k, k]`
    pub weight: Param<F>,
}

impl<F: Float> Conv2d<F> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::filled(vec![out_channels, in_channels, kernel, kernel], F::zero()),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Writes one sample's patches into columns `[off, off + oh*ow)` of a
    /// row-major matrix with leading dimension `ld`.
    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, x: &[F], h: usize, w: usize, oh: usize, ow: usize, col: &mut [F], ld: usize, off: usize) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * ld + off..row * ld + off + plane];
                    for oy in 0..oh {
                        let iy = oy as isize * s - p + ky as isize;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out_row.iter_mut().for_each(|v| *v = F::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let (lo, hi) = valid_range(ow, w, self.stride, self.padding, kx);
                        out_row[..lo].iter_mut().for_each(|v| *v = F::zero());
                        out_row[hi..].iter_mut().for_each(|v| *v = F::zero());
                        if lo < hi {
                            let first = lo * self.stride + kx - self.padding;
                            if self.stride == 1 {
                                out_row[lo..hi].copy_from_slice(&src_row[first..first + hi - lo]);
                            } else {
                                for (v, &xv) in out_row[lo..hi].iter_mut().zip(src_row[first..].iter().step_by(self.stride)) {
                                    *v = xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im_add(&self, col: &[F], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [F], ld: usize, off: usize) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * ld + off..row * ld + off + plane];
                    for oy in 0..oh {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let (lo, hi) = valid_range(ow, w, self.stride, self.padding, kx);
                        if lo < hi {
                            let first = lo * self.stride + kx - self.padding;
                            let g = &src[oy * ow + lo..oy * ow + hi];
                            for (d, &v) in dst_row[first..].iter_mut().step_by(self.stride).zip(g) {
                                *d = *d + v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Samples per GEMM so the patch matrix stays near `COL_BUDGET` values.
    fn chunk(&self, plane: usize) -> usize {
        (COL_BUDGET / (self.col_rows() * plane).max(1)).max(1)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        assert_eq!(x.c, self.in_channels, "conv input channel mismatch");
        let (oh, ow) = self.output_size(x.h, x.w);
        let mut out = Tensor::zeros(x.n, self.out_channels, oh, ow);
        let rows = self.col_rows();
        let plane = oh * ow;
        let co = self.out_channels;
        let chunk = self.chunk(plane);
        let mut col = vec![F::zero(); rows * plane * chunk.min(x.n)];
        let mut tmp = vec![F::zero(); co * plane * chunk.min(x.n)];
        for start in (0..x.n).step_by(chunk) {
            let nb = chunk.min(x.n - start);
            let ld = nb * plane;
            for j in 0..nb {
                self.im2col(x.sample(start + j), x.h, x.w, oh, ow, &mut col, ld, j * plane);
            }
            gemm::nn(co, rows, ld, &self.weight.value, &col[..rows * ld], F::zero(), &mut tmp[..co * ld]);
            for j in 0..nb {
                let dst = out.sample_mut(start + j);
                for c in 0..co {
                    dst[c * plane..(c + 1) * plane].copy_from_slice(&tmp[c * ld + j * plane..c * ld + (j + 1) * plane]);
                }
            }
        }
        out
    }

    /// Accumulates the weight gradient and, when `want_dx`, returns the
    /// input gradient.
    pub fn backward(&mut self, x: &Tensor<F>, dout: &Tensor<F>, want_dx: bool) -> Option<Tensor<F>> {
        let (oh, ow) = (dout.h, dout.w);
        let rows = self.col_rows();
        let plane = oh * ow;
        let co = self.out_channels;
        let chunk = self.chunk(plane);
        let cap = chunk.min(x.n);
        let mut col = vec![F::zero(); rows * plane * cap];
        let mut g = vec![F::zero(); co * plane * cap];
        let mut dcol = if want_dx { vec![F::zero(); rows * plane * cap] } else { Vec::new() };
        let mut dx = if want_dx { Tensor::zeros(x.n, x.c, x.h, x.w) } else { Tensor::zeros(0, 0, 0, 0) };
        for start in (0..x.n).step_by(chunk) {
            let nb = chunk.min(x.n - start);
            let ld = nb * plane;
            for j in 0..nb {
                self.im2col(x.sample(start + j), x.h, x.w, oh, ow, &mut col, ld, j * plane);
                let src = dout.sample(start + j);
                for c in 0..co {
                    g[c * ld + j * plane..c * ld + (j + 1) * plane].copy_from_slice(&src[c * plane..(c + 1) * plane]);
                }
            }
            // dW[co, r] += Σ_p g[co, p] col[r, p]
            gemm::nt(co, ld, rows, &g[..co * ld], &col[..rows * ld], F::one(), &mut self.weight.grad);
            if want_dx {
                // dcol[r, p] = Σ_co W[co, r] g[co, p]
                gemm::tn(rows, co, ld, &self.weight.value, &g[..co * ld], F::zero(), &mut dcol[..rows * ld]);
                for j in 0..nb {
                    self.col2im_add(&dcol, x.h, x.w, oh, ow, dx.sample_mut(start + j), ld, j * plane);
                }
            }
        }
        want_dx.then_some(dx)
    }
}
