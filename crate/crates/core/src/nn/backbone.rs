//! Residual 1-D convolutional feature extractor.
//!
//! Each block is conv→BN→ReLU, conv→BN→ReLU, conv→BN, then the shortcut is
//! added and a final ReLU applied. The shortcut is a kernel-1 projection
//! with its own batch norm when the channel count changes, identity
//! otherwise. Global average pooling over time closes the network.

use super::layers::{relu_inplace, relu_mask, BatchNorm1d, BnCache, Conv1d};
use super::tensor::{Act, Tensor};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct Shortcut {
    pub conv: Conv1d,
    pub bn: BatchNorm1d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub convs: Vec<Conv1d>,
    pub bns: Vec<BatchNorm1d>,
    pub shortcut: Option<Shortcut>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    input: Act,
    /// Post-ReLU outputs of every conv stage but the last.
    hidden: Vec<Act>,
    bn: Vec<BnCache>,
    shortcut_bn: Option<BnCache>,
    output: Act,
}

/// Gradients of one block, in the same layout as [`ResBlock`].
#[derive(Debug, Clone)]
pub(crate) struct BlockGrads {
    pub convs: Vec<Tensor>,
    pub gammas: Vec<Tensor>,
    pub betas: Vec<Tensor>,
    pub shortcut: Option<(Tensor, Tensor, Tensor)>,
}

impl ResBlock {
    pub fn init(in_ch: usize, width: usize, kernels: &[usize], rng: &mut Stream) -> Self {
        let mut convs = Vec::with_capacity(kernels.len());
        let mut ch = in_ch;
        for &k in kernels {
            convs.push(Conv1d::init(ch, width, k, rng));
            ch = width;
        }
        let shortcut = (in_ch != width).then(|| Shortcut {
            conv: Conv1d::init(in_ch, width, 1, rng),
            bn: BatchNorm1d::new(width),
        });
        Self {
            bns: kernels.iter().map(|_| BatchNorm1d::new(width)).collect(),
            convs,
            shortcut,
        }
    }

    pub fn forward_eval(&self, x: &Act) -> Act {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, (conv, bn)) in self.convs.iter().zip(&self.bns).enumerate() {
            h = bn.forward_eval(&conv.forward(&h));
            if i < last {
                relu_inplace(&mut h);
            }
        }
        match &self.shortcut {
            Some(s) => add_into(&mut h, &s.bn.forward_eval(&s.conv.forward(x))),
            None => add_into(&mut h, x),
        }
        relu_inplace(&mut h);
        h
    }

    pub(crate) fn forward_train(&self, x: &Act) -> (Act, BlockCache) {
        let last = self.convs.len() - 1;
        let mut hidden = Vec::with_capacity(last);
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for (i, (conv, bn)) in self.convs.iter().zip(&self.bns).enumerate() {
            let (mut y, c) = bn.forward_train(&conv.forward(&h));
            caches.push(c);
            if i < last {
                relu_inplace(&mut y);
                hidden.push(y.clone());
            }
            h = y;
        }
        let shortcut_bn = match &self.shortcut {
            Some(s) => {
                let (y, c) = s.bn.forward_train(&s.conv.forward(x));
                add_into(&mut h, &y);
                Some(c)
            }
            None => {
                add_into(&mut h, x);
                None
            }
        };
        relu_inplace(&mut h);
        let cache = BlockCache {
            input: x.clone(),
            hidden,
            bn: caches,
            shortcut_bn,
            output: h.clone(),
        };
        (h, cache)
    }

    pub(crate) fn absorb(&mut self, cache: &BlockCache) {
        for (bn, c) in self.bns.iter_mut().zip(&cache.bn) {
            bn.absorb(c);
        }
        if let (Some(s), Some(c)) = (&mut self.shortcut, &cache.shortcut_bn) {
            s.bn.absorb(c);
        }
    }

    pub(crate) fn backward(&self, cache: &BlockCache, dout: &Act, want_dx: bool) -> (BlockGrads, Option<Act>) {
        let mut d = dout.clone();
        relu_mask(&mut d, &cache.output);
        let d_sum = d.clone();

        let n = self.convs.len();
        let mut convs = vec![None; n];
        let mut gammas = vec![None; n];
        let mut betas = vec![None; n];
        let mut dx_main = None;
        for i in (0..n).rev() {
            let (dt, dg, db) = self.bns[i].backward(&d, &cache.bn[i]);
            gammas[i] = Some(dg);
            betas[i] = Some(db);
            let input = if i == 0 { &cache.input } else { &cache.hidden[i - 1] };
            let need = i > 0 || want_dx;
            let (dw, dh) = self.convs[i].backward(input, &dt, need);
            convs[i] = Some(dw);
            if i > 0 {
                d = dh.expect("requested");
                relu_mask(&mut d, &cache.hidden[i - 1]);
            } else {
                dx_main = dh;
            }
        }

        let (shortcut, dx_short) = match (&self.shortcut, &cache.shortcut_bn) {
            (Some(s), Some(c)) => {
                let (dt, dg, db) = s.bn.backward(&d_sum, c);
                let (dw, dx) = s.conv.backward(&cache.input, &dt, want_dx);
                (Some((dw, dg, db)), dx)
            }
            _ => (None, want_dx.then_some(d_sum)),
        };
        let dx = match (dx_main, dx_short) {
            (Some(mut a), Some(b)) => {
                add_into(&mut a, &b);
                Some(a)
            }
            _ => None,
        };
        let grads = BlockGrads {
            convs: convs.into_iter().map(Option::unwrap).collect(),
            gammas: gammas.into_iter().map(Option::unwrap).collect(),
            betas: betas.into_iter().map(Option::unwrap).collect(),
            shortcut,
        };
        (grads, dx)
    }
}

fn add_into(acc: &mut Act, other: &Act) {
    debug_assert!(acc.same_shape(other));
    for (a, b) in acc.data.iter_mut().zip(&other.data) {
        *a += b;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub blocks: Vec<ResBlock>,
}

#[derive(Debug, Clone)]
pub(crate) struct BackboneCache {
    pub(crate) blocks: Vec<BlockCache>,
    batch: usize,
    len: usize,
    width: usize,
}

impl BackboneCache {
    /// Sign of every ReLU input, in forward order.
    pub(crate) fn relu_pattern(&self, out: &mut Vec<bool>) {
        for b in &self.blocks {
            for h in b.hidden.iter().chain(std::iter::once(&b.output)) {
                out.extend(h.data.iter().map(|&v| v > 0.0));
            }
        }
    }
}

impl Backbone {
    pub fn init(in_ch: usize, width: usize, blocks: usize, kernels: &[usize], rng: &mut Stream) -> Self {
        let mut ch = in_ch;
        let blocks = (0..blocks)
            .map(|_| {
                let b = ResBlock::init(ch, width, kernels, rng);
                ch = width;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn width(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.convs[0].out_ch())
    }

    pub fn max_kernel(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| b.convs.iter().map(Conv1d::kernel))
            .max()
            .unwrap_or(1)
    }

    fn check_input(&self, x: &Act) -> Result<()> {
        let k = self.max_kernel();
        if x.len < k {
            return Err(Error::ShapeError(format!(
                "series length {} shorter than the largest kernel {k}",
                x.len
            )));
        }
        if x.channels != self.blocks[0].convs[0].in_ch() {
            return Err(Error::ShapeError(format!("backbone expects {} input channels", self.blocks[0].convs[0].in_ch())));
        }
        Ok(())
    }

    /// Mean over time per sample and channel, row-major `[batch][channels]`.
    fn pool(h: &Act) -> Vec<f64> {
        let mut z = vec![0.0; h.batch * h.channels];
        for c in 0..h.channels {
            let plane = h.channel(c);
            for b in 0..h.batch {
                let s: f64 = plane[b * h.len..(b + 1) * h.len].iter().sum();
                z[b * h.channels + c] = s / h.len as f64;
            }
        }
        z
    }

    pub fn forward_eval(&self, x: &Act) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward_eval(&h);
        }
        let z = Self::pool(&h);
        finite(&z, "backbone")?;
        Ok(z)
    }

    pub(crate) fn forward_train(&self, x: &Act) -> Result<(Vec<f64>, BackboneCache)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            let (out, c) = b.forward_train(&h);
            caches.push(c);
            h = out;
        }
        let z = Self::pool(&h);
        finite(&z, "backbone")?;
        Ok((
            z,
            BackboneCache {
                blocks: caches,
                batch: x.batch,
                len: x.len,
                width: h.channels,
            },
        ))
    }

    pub(crate) fn absorb(&mut self, cache: &BackboneCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.absorb(c);
        }
    }

    /// `dz` is the gradient w.r.t. the pooled `[batch][width]` embedding.
    pub(crate) fn backward(&self, cache: &BackboneCache, dz: &[f64]) -> Vec<BlockGrads> {
        let (batch, len, width) = (cache.batch, cache.len, cache.width);
        let mut d = Act::zeros(width, batch, len);
        let inv = 1.0 / len as f64;
        for c in 0..width {
            for b in 0..batch {
                let g = dz[b * width + c] * inv;
                let off = (c * batch + b) * len;
                d.data[off..off + len].iter_mut().for_each(|v| *v = g);
            }
        }
        let mut grads = Vec::with_capacity(self.blocks.len());
        for (i, (block, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let (g, dx) = block.backward(c, &d, i > 0);
            grads.push(g);
            if let Some(dx) = dx {
                d = dx;
            }
        }
        grads.reverse();
        grads
    }
}

pub(crate) fn finite(v: &[f64], stage: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalDivergence(stage))
    }
}
