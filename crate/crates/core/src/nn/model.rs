use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backbone::{finite, Backbone, BackboneCache, BlockGrads};
use super::gcn::{Gcn, GcnCache};
use super::loss::{softmax_xent, xent_grad};
use super::tensor::{Act, Tensor};
use crate::error::{Error, Result};
use crate::graph::BatchGraph;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub blocks: usize,
    pub kernels: Vec<usize>,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    /// Three residual blocks of 64-channel convolutions with kernels 7, 5
    /// and 3, followed by one graph convolution.
    pub fn standard(n_classes: usize) -> Self {
        Self {
            width: 64,
            blocks: 3,
            kernels: vec![7, 5, 3],
            gcn_layers: 1,
            gcn_hidden: 64,
            n_classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Backbone + graph convolution stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub gcn: Gcn,
}

/// Intermediates of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    backbone: BackboneCache,
    gcn: GcnCache,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    /// On/off state of every ReLU in the pass. Two parameter settings with
    /// the same pattern lie in one smooth piece of the loss, which is what
    /// finite-difference checks need.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        self.backbone.relu_pattern(&mut out);
        self.gcn.relu_pattern(&mut out);
        out
    }
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut r = rng::substream(&[seed, 0x1417]);
        let backbone = Backbone::init(1, config.width, config.blocks, &config.kernels, &mut r);
        let gcn = Gcn::init(config.width, config.gcn_hidden, config.gcn_layers, config.n_classes, &mut r);
        Self {
            config,
            backbone,
            gcn,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn embed_dim(&self) -> usize {
        self.config.width
    }

    /// Embeddings `[m][width]` for a batch of single-channel series.
    pub fn backbone_forward(&self, x: &Act, mode: Mode) -> Result<Vec<f64>> {
        match mode {
            Mode::Eval => self.backbone.forward_eval(x),
            Mode::Train => Ok(self.backbone.forward_train(x)?.0),
        }
    }

    pub fn gcn_forward(&self, z: &[f64], g: &BatchGraph) -> Result<Vec<f64>> {
        let logits = self.gcn.forward(z, g)?;
        finite(&logits, "gcn")?;
        Ok(logits)
    }

    pub fn forward_eval(&self, x: &Act, g: &BatchGraph) -> Result<Vec<f64>> {
        let z = self.backbone.forward_eval(x)?;
        self.gcn_forward(&z, g)
    }

    pub fn forward_train(&self, x: &Act, g: &BatchGraph) -> Result<ForwardCache> {
        if x.batch != g.m {
            return Err(Error::ShapeError(format!("batch of {} with a {}-node graph", x.batch, g.m)));
        }
        let (embedding, backbone) = self.backbone.forward_train(x)?;
        let (logits, gcn) = self.gcn.forward_cached(&embedding, g)?;
        finite(&logits, "gcn")?;
        Ok(ForwardCache {
            backbone,
            gcn,
            embedding,
            logits,
        })
    }

    /// Train-mode labeled-node loss; does not touch running statistics.
    pub fn loss(&self, x: &Act, g: &BatchGraph, labels: &[Option<usize>]) -> Result<f64> {
        let cache = self.forward_train(x, g)?;
        Ok(softmax_xent(&cache.logits, self.n_classes(), labels)?.0)
    }

    /// Exact gradients of the labeled-node cross-entropy, in
    /// [`Model::params`] order, together with the loss.
    pub fn backward(&self, cache: &ForwardCache, g: &BatchGraph, labels: &[Option<usize>]) -> Result<(f64, Vec<Tensor>)> {
        let c = self.n_classes();
        let (loss, probs) = softmax_xent(&cache.logits, c, labels)?;
        let dlogits = xent_grad(&probs, c, labels);
        let (gcn_grads, dz) = self.gcn.backward(&cache.gcn, g, &dlogits);
        let block_grads = self.backbone.backward(&cache.backbone, &dz);
        let mut out = Vec::new();
        for bg in block_grads {
            flatten_block(bg, &mut out);
        }
        for (w, b) in gcn_grads {
            out.push(w);
            out.push(b);
        }
        if out.iter().any(|t| !t.is_finite()) {
            return Err(Error::NumericalDivergence("backward"));
        }
        Ok((loss, out))
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates used in eval mode.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        self.backbone.absorb(&cache.backbone);
    }

    /// Trainable tensors in a fixed order: per block, each conv weight
    /// followed by its BN scale and shift, then the shortcut conv and BN;
    /// then per GCN layer, weight and bias.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.backbone.blocks {
            for (conv, bn) in b.convs.iter().zip(&b.bns) {
                out.extend([&conv.weight, &bn.gamma, &bn.beta]);
            }
            if let Some(s) = &b.shortcut {
                out.extend([&s.conv.weight, &s.bn.gamma, &s.bn.beta]);
            }
        }
        for l in &self.gcn.layers {
            out.extend([&l.weight, &l.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.backbone.blocks {
            for (conv, bn) in b.convs.iter_mut().zip(b.bns.iter_mut()) {
                out.push(&mut conv.weight);
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
            if let Some(s) = &mut b.shortcut {
                out.push(&mut s.conv.weight);
                out.push(&mut s.bn.gamma);
                out.push(&mut s.bn.beta);
            }
        }
        for l in &mut self.gcn.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Human-readable names aligned with [`Model::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (bi, b) in self.backbone.blocks.iter().enumerate() {
            for ci in 0..b.convs.len() {
                out.push(format!("block{bi}.conv{ci}.weight"));
                out.push(format!("block{bi}.bn{ci}.gamma"));
                out.push(format!("block{bi}.bn{ci}.beta"));
            }
            if b.shortcut.is_some() {
                out.push(format!("block{bi}.shortcut.weight"));
                out.push(format!("block{bi}.shortcut_bn.gamma"));
                out.push(format!("block{bi}.shortcut_bn.beta"));
            }
        }
        for li in 0..self.gcn.layers.len() {
            out.push(format!("gcn{li}.weight"));
            out.push(format!("gcn{li}.bias"));
        }
        out
    }

    /// Every tensor, trainable or not, in checkpoint order.
    fn state_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.backbone.blocks {
            for (conv, bn) in b.convs.iter_mut().zip(b.bns.iter_mut()) {
                out.push(&mut conv.weight);
                out.extend([&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var]);
            }
            if let Some(s) = &mut b.shortcut {
                out.push(&mut s.conv.weight);
                let bn = &mut s.bn;
                out.extend([&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var]);
            }
        }
        for l in &mut self.gcn.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut copy = self.clone();
        let cfg = &self.config;
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.push(CKPT_VERSION);
        for v in [cfg.width, cfg.blocks, cfg.gcn_layers, cfg.gcn_hidden, cfg.n_classes, cfg.kernels.len()] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &k in &cfg.kernels {
            buf.extend_from_slice(&(k as u32).to_le_bytes());
        }
        let state = copy.state_mut();
        buf.extend_from_slice(&(state.len() as u32).to_le_bytes());
        for t in state {
            buf.push(t.shape.len() as u8);
            for &d in &t.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CKPT_MAGIC {
            return Err(Error::FormatError("bad checkpoint magic".into()));
        }
        let version = r.take(1)?[0];
        if version != CKPT_VERSION {
            return Err(Error::FormatError(format!("unsupported checkpoint version {version}")));
        }
        let mut next = || r.u32().map(|v| v as usize);
        let (width, blocks, gcn_layers, gcn_hidden, n_classes, nk) = (next()?, next()?, next()?, next()?, next()?, next()?);
        let kernels = (0..nk).map(|_| next()).collect::<Result<Vec<_>>>()?;
        if kernels.iter().any(|k| k % 2 == 0) || gcn_layers == 0 || nk == 0 {
            return Err(Error::FormatError("invalid model configuration".into()));
        }
        let config = ModelConfig {
            width,
            blocks,
            kernels,
            gcn_layers,
            gcn_hidden,
            n_classes,
        };
        let mut model = Model::init(config, 0);
        let count = r.u32()? as usize;
        let mut state = model.state_mut();
        if count != state.len() {
            return Err(Error::FormatError(format!("{count} tensors, model needs {}", state.len())));
        }
        for t in state.iter_mut() {
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            if shape != t.shape {
                return Err(Error::FormatError(format!("tensor shape {shape:?}, expected {:?}", t.shape)));
            }
            for v in t.data.iter_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::FormatError("trailing bytes in checkpoint".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

const CKPT_MAGIC: &[u8; 4] = b"LBCK";
const CKPT_VERSION: u8 = 0x01;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::TruncatedFile {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn flatten_block(bg: BlockGrads, out: &mut Vec<Tensor>) {
    for ((w, g), b) in bg.convs.into_iter().zip(bg.gammas).zip(bg.betas) {
        out.extend([w, g, b]);
    }
    if let Some((w, g, b)) = bg.shortcut {
        out.extend([w, g, b]);
    }
}
