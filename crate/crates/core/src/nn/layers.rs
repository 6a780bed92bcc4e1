use rand::Rng;

use super::tensor::{gemm, Act, Tensor};
use crate::rng::Stream;

/// 1-D convolution, stride 1, same padding, no bias (a batch norm follows).
/// Weight shape `[out, in, kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Tensor,
}

impl Conv1d {
    /// Uniform init with bound `1/sqrt(in * kernel)`.
    pub fn init(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut Stream) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let data = (0..out_ch * in_ch * kernel)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor {
                shape: vec![out_ch, in_ch, kernel],
                data,
            },
        }
    }

    pub fn out_ch(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_ch(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    /// Unfolds `x` into `[in * kernel][batch * len]`. Every element is
    /// written once; zeroing the whole buffer first costs as much as the copy.
    fn im2col(&self, x: &Act) -> Vec<f64> {
        let (k, pad, l) = (self.kernel(), self.kernel() / 2, x.len);
        let mut col = Vec::with_capacity(x.channels * k * x.plane());
        for c in 0..x.channels {
            let src = x.channel(c);
            for kk in 0..k {
                // output t reads input t + kk - pad
                let t_lo = pad.saturating_sub(kk);
                let t_hi = (l + pad).saturating_sub(kk).min(l);
                for s in src.chunks_exact(l) {
                    if t_lo >= t_hi {
                        col.resize(col.len() + l, 0.0);
                        continue;
                    }
                    col.resize(col.len() + t_lo, 0.0);
                    col.extend_from_slice(&s[t_lo + kk - pad..t_hi + kk - pad]);
                    col.resize(col.len() + l - t_hi, 0.0);
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &Act) -> Act {
        assert_eq!(x.channels, self.in_ch());
        let col = self.im2col(x);
        let rows = self.in_ch() * self.kernel();
        let plane = x.plane();
        let mut out = Act::zeros(self.out_ch(), x.batch, x.len);
        gemm(
            self.out_ch(),
            rows,
            plane,
            &self.weight.data,
            (rows as isize, 1),
            &col,
            (plane as isize, 1),
            &mut out.data,
            0.0,
        );
        out
    }

    /// Channel-swapped, time-reversed kernel: convolving `dout` with it
    /// gives the input gradient (odd kernels keep the same padding).
    fn adjoint(&self) -> Conv1d {
        let (o, i, k) = (self.out_ch(), self.in_ch(), self.kernel());
        let mut w = Tensor::zeros(&[i, o, k]);
        for oc in 0..o {
            for ic in 0..i {
                for kk in 0..k {
                    w.data[(ic * o + oc) * k + (k - 1 - kk)] = self.weight.data[(oc * i + ic) * k + kk];
                }
            }
        }
        Conv1d { weight: w }
    }

    /// Returns the weight gradient, plus the input gradient when asked.
    pub fn backward(&self, x: &Act, dout: &Act, want_dx: bool) -> (Tensor, Option<Act>) {
        let col = self.im2col(x);
        let rows = self.in_ch() * self.kernel();
        let plane = x.plane();
        let mut dw = self.weight.zeros_like();
        gemm(
            self.out_ch(),
            plane,
            rows,
            &dout.data,
            (plane as isize, 1),
            &col,
            (1, plane as isize),
            &mut dw.data,
            0.0,
        );
        let dx = want_dx.then(|| self.adjoint().forward(dout));
        (dw, dx)
    }
}

/// Per-channel batch normalization over (batch, time).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Act,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased batch variance, used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

impl BatchNorm1d {
    pub const EPS: f64 = 1e-5;
    /// Weight of the old running estimate.
    pub const MOMENTUM: f64 = 0.9;

    pub fn new(ch: usize) -> Self {
        Self {
            gamma: Tensor::full(&[ch], 1.0),
            beta: Tensor::zeros(&[ch]),
            running_mean: Tensor::zeros(&[ch]),
            running_var: Tensor::full(&[ch], 1.0),
        }
    }

    pub fn forward_train(&self, x: &Act) -> (Act, BnCache) {
        let n = x.plane() as f64;
        let mut y = Vec::with_capacity(x.data.len());
        let mut xhat = Vec::with_capacity(x.data.len());
        let mut inv_std = Vec::with_capacity(x.channels);
        let mut means = Vec::with_capacity(x.channels);
        let mut vars = Vec::with_capacity(x.channels);
        for c in 0..x.channels {
            let src = x.channel(c);
            let mean = src.iter().sum::<f64>() / n;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + Self::EPS).sqrt();
            let (g, b) = (self.gamma.data[c], self.beta.data[c]);
            let start = xhat.len();
            xhat.extend(src.iter().map(|v| (v - mean) * is));
            y.extend(xhat[start..].iter().map(|h| g * h + b));
            inv_std.push(is);
            means.push(mean);
            vars.push(if n > 1.0 { var * n / (n - 1.0) } else { var });
        }
        let shaped = |data| Act {
            channels: x.channels,
            batch: x.batch,
            len: x.len,
            data,
        };
        (
            shaped(y),
            BnCache {
                xhat: shaped(xhat),
                inv_std,
                mean: means,
                var_unbiased: vars,
            },
        )
    }

    pub fn forward_eval(&self, x: &Act) -> Act {
        let mut y = x.clone();
        let p = x.plane();
        for c in 0..x.channels {
            let is = 1.0 / (self.running_var.data[c] + Self::EPS).sqrt();
            let (g, b, m) = (self.gamma.data[c], self.beta.data[c], self.running_mean.data[c]);
            for v in &mut y.data[c * p..(c + 1) * p] {
                *v = g * (*v - m) * is + b;
            }
        }
        y
    }

    pub fn absorb(&mut self, cache: &BnCache) {
        let m = Self::MOMENTUM;
        for c in 0..self.gamma.len() {
            self.running_mean.data[c] = m * self.running_mean.data[c] + (1.0 - m) * cache.mean[c];
            self.running_var.data[c] = m * self.running_var.data[c] + (1.0 - m) * cache.var_unbiased[c];
        }
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, dy: &Act, cache: &BnCache) -> (Act, Tensor, Tensor) {
        let n = dy.plane() as f64;
        let mut dx = Vec::with_capacity(dy.data.len());
        let mut dgamma = self.gamma.zeros_like();
        let mut dbeta = self.beta.zeros_like();
        for c in 0..dy.channels {
            let g = dy.channel(c);
            let xh = cache.xhat.channel(c);
            let sum_g: f64 = g.iter().sum();
            let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
            dbeta.data[c] = sum_g;
            dgamma.data[c] = sum_gx;
            let scale = self.gamma.data[c] * cache.inv_std[c] / n;
            dx.extend(g.iter().zip(xh).map(|(&gi, &h)| scale * (n * gi - sum_g - h * sum_gx)));
        }
        let dx = Act {
            channels: dy.channels,
            batch: dy.batch,
            len: dy.len,
            data: dx,
        };
        (dx, dgamma, dbeta)
    }
}

pub(crate) fn relu_inplace(x: &mut Act) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the post-ReLU activation is not positive.
pub(crate) fn relu_mask(grad: &mut Act, activated: &Act) {
    for (g, &a) in grad.data.iter_mut().zip(&activated.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
