//! Transductive training loop, anchored-batch inference and the 1NN-DTW
//! baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{shuffle, Dataset, SemiSplit, TimeSeries};
use crate::distance::{dtw_unchecked, pairwise_series, DistanceKind, DistanceMatrix, WarpBand};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::graph::{build_graph, GraphConfig};
use crate::nn::{argmax_rows, Act, Adam, Model, ModelConfig, TrainConfig};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "simtsc-dtw")]
    SimTscDtw,
    #[serde(rename = "lb-simtsc")]
    LbSimTsc,
    #[serde(rename = "1nn-dtw")]
    OneNnDtw,
}

impl Method {
    /// Matrix kind a graph method consumes.
    pub fn matrix_kind(self) -> Option<DistanceKind> {
        match self {
            Method::SimTscDtw => Some(DistanceKind::Dtw),
            Method::LbSimTsc => Some(DistanceKind::LbKeogh),
            Method::OneNnDtw => None,
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            Method::LbSimTsc => GraphConfig::LB_ALPHA,
            _ => GraphConfig::DTW_ALPHA,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SimTscDtw => "simtsc-dtw",
            Method::LbSimTsc => "lb-simtsc",
            Method::OneNnDtw => "1nn-dtw",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simtsc-dtw" | "simtsc" | "dtw" => Ok(Method::SimTscDtw),
            "lb-simtsc" | "lb" => Ok(Method::LbSimTsc),
            "1nn-dtw" | "1nn" => Ok(Method::OneNnDtw),
            _ => Err(Error::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }
}

/// One training or inference batch: `m/2` labeled nodes first, then `m/2`
/// unlabeled ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSample {
    pub indices: Vec<usize>,
    pub labeled_mask: Vec<bool>,
    pub labels: Vec<Option<usize>>,
}

impl BatchSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draws `count` indices from `pool`, without replacement when the pool is
/// large enough and with replacement otherwise.
fn draw(pool: &[usize], count: usize, rng: &mut Stream) -> Vec<usize> {
    if pool.len() >= count {
        let mut p = pool.to_vec();
        for i in 0..count {
            let j = rng.random_range(i..p.len());
            p.swap(i, j);
        }
        p.truncate(count);
        p
    } else {
        (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

/// Class-balanced labeled half: `floor((m/2)/C)` per class, with the
/// remainder going to the first classes of a seeded class permutation.
/// Only the labeled pool's labels are consulted.
fn labeled_half(data: &Dataset, split: &SemiSplit, half: usize, rng: &mut Stream) -> Result<(Vec<usize>, Vec<usize>)> {
    let pools: Vec<(usize, Vec<usize>)> = split
        .labeled_by_class(data)
        .into_iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(c, p)| (c + 1, p))
        .collect();
    if pools.is_empty() {
        return Err(Error::NoSupervision);
    }
    let n_cls = pools.len();
    let mut order: Vec<usize> = (0..n_cls).collect();
    shuffle(&mut order, rng);
    let mut quota = vec![half / n_cls; n_cls];
    for &c in order.iter().take(half % n_cls) {
        quota[c] += 1;
    }
    let mut idx = Vec::with_capacity(half);
    let mut labels = Vec::with_capacity(half);
    for ((class, pool), q) in pools.iter().zip(quota) {
        let picked = draw(pool, q, rng);
        labels.extend(std::iter::repeat_n(*class, picked.len()));
        idx.extend(picked);
    }
    Ok((idx, labels))
}

pub fn sample_batch(data: &Dataset, split: &SemiSplit, m: usize, rng: &mut Stream) -> Result<BatchSample> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::InvalidArgument(format!("batch size must be even and >= 2, got {m}")));
    }
    let half = m / 2;
    let (mut indices, labels) = labeled_half(data, split, half, rng)?;
    let mut out_labels: Vec<Option<usize>> = labels.into_iter().map(Some).collect();
    let mut unlabeled_pool: Vec<usize> = split.unlabeled_idx.iter().chain(&split.test_idx).copied().collect();
    if unlabeled_pool.is_empty() {
        // Nothing unlabeled exists; reuse labeled instances as label-free nodes.
        unlabeled_pool = split.labeled_idx.clone();
    }
    for _ in 0..half {
        indices.push(unlabeled_pool[rng.random_range(0..unlabeled_pool.len())]);
        out_labels.push(None);
    }
    Ok(BatchSample {
        labeled_mask: out_labels.iter().map(Option::is_some).collect(),
        labels: out_labels,
        indices,
    })
}

/// Where batch distance blocks come from.
#[derive(Debug, Clone, Copy)]
pub enum DistanceSource<'a> {
    /// Slice the block out of a whole-dataset matrix.
    Precomputed(&'a DistanceMatrix),
    /// Recompute the block for every batch.
    PerBatch { kind: DistanceKind, band: WarpBand },
}

impl DistanceSource<'_> {
    fn kind(&self) -> DistanceKind {
        match self {
            DistanceSource::Precomputed(m) => m.kind(),
            DistanceSource::PerBatch { kind, .. } => *kind,
        }
    }

    fn band(&self) -> WarpBand {
        match self {
            DistanceSource::Precomputed(m) => m.band(),
            DistanceSource::PerBatch { band, .. } => *band,
        }
    }

    fn block(&self, data: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
        match self {
            DistanceSource::Precomputed(m) => Ok(m.submatrix(idx)),
            DistanceSource::PerBatch { kind, band } => {
                let series: Vec<TimeSeries> = idx.iter().map(|&i| data.series(i).clone()).collect();
                Ok(pairwise_series(&series, *kind, *band, 1)?.values().to_vec())
            }
        }
    }

    fn check(&self, data: &Dataset, method: Method) -> Result<()> {
        if let DistanceSource::Precomputed(m) = self {
            if m.n_rows() != data.len() || m.n_cols() != data.len() {
                return Err(Error::ShapeError(format!(
                    "matrix is {}x{}, dataset has {} instances",
                    m.n_rows(),
                    m.n_cols(),
                    data.len()
                )));
            }
        }
        let expected = method.matrix_kind().ok_or_else(|| Error::InvalidArgument(format!("{method} does not train a graph model")))?;
        if self.kind() != expected {
            return Err(Error::KindMismatch {
                method: method.to_string(),
                expected: expected.to_string(),
                found: self.kind().to_string(),
            });
        }
        Ok(())
    }
}

/// Report of one run. Field names are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub method: Method,
    pub beta: usize,
    pub seed: u64,
    pub alpha: Option<f64>,
    pub k: Option<usize>,
    /// Warping radius in timestamps; `None` means unconstrained.
    pub r: Option<usize>,
    pub epochs: usize,
    pub matrix_seconds: f64,
    pub train_seconds: f64,
    pub accuracy: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub label_map: BTreeMap<usize, i64>,
    /// How test nodes were batched at inference.
    pub inference: String,
    pub loss_history: Vec<f64>,
    pub predictions: Vec<usize>,
}

impl RunManifest {
    /// Copy with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        Self {
            matrix_seconds: 0.0,
            train_seconds: 0.0,
            ..self.clone()
        }
    }

    fn skeleton(data: &Dataset, split: &SemiSplit, method: Method, band: Option<WarpBand>) -> Self {
        Self {
            dataset: String::new(),
            method,
            beta: split.beta,
            seed: split.seed,
            alpha: None,
            k: None,
            r: band.and_then(|b| match b {
                WarpBand::Radius(r) => Some(r.min(data.series_len().saturating_sub(1))),
                WarpBand::Unconstrained => None,
            }),
            epochs: 0,
            matrix_seconds: 0.0,
            train_seconds: 0.0,
            accuracy: None,
            batch_size: None,
            lr: None,
            weight_decay: None,
            n_labeled: split.labeled_idx.len(),
            n_unlabeled: split.unlabeled_idx.len(),
            n_test: split.test_idx.len(),
            label_map: data.label_map(),
            inference: String::new(),
            loss_history: Vec::new(),
            predictions: Vec::new(),
        }
    }
}

pub const ANCHORED_INFERENCE: &str = "anchored-batch";

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub manifest: RunManifest,
}

fn batch_input(data: &Dataset, idx: &[usize]) -> Result<Act> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| data.series(i).values()).collect();
    Act::from_rows(&rows)
}

/// Trains a fresh model: one sampled batch per epoch, graph built from the
/// batch's distance block, loss on the labeled half, then an Adam step.
pub fn train(
    data: &Dataset,
    split: &SemiSplit,
    distances: DistanceSource<'_>,
    method: Method,
    gcfg: &GraphConfig,
    tcfg: &TrainConfig,
) -> Result<Trained> {
    distances.check(data, method)?;
    if tcfg.batch_size < 2 || tcfg.batch_size % 2 != 0 {
        return Err(Error::InvalidArgument(format!("batch size must be even, got {}", tcfg.batch_size)));
    }
    if gcfg.k > tcfg.batch_size {
        return Err(Error::KTooLarge {
            k: gcfg.k,
            m: tcfg.batch_size,
        });
    }
    let start = Instant::now();
    let mut model = Model::init(ModelConfig::standard(data.n_classes()), tcfg.seed);
    let mut opt = Adam::new(tcfg.lr, tcfg.weight_decay, &model.params());
    let mut batch_rng = rng::substream(&[tcfg.seed, 0xBA7C]);
    let mut losses = Vec::with_capacity(tcfg.epochs);
    for epoch in 0..tcfg.epochs {
        let batch = sample_batch(data, split, tcfg.batch_size, &mut batch_rng)?;
        let block = distances.block(data, &batch.indices)?;
        let graph = build_graph(&block, batch.len(), gcfg, epoch as u64)?;
        let x = batch_input(data, &batch.indices)?;
        let cache = model.forward_train(&x, &graph)?;
        let (loss, grads) = model.backward(&cache, &graph, &batch.labels)?;
        model.absorb_batch_stats(&cache);
        opt.step(&mut model.params_mut(), &grads);
        losses.push(loss);
    }
    let mut manifest = RunManifest::skeleton(data, split, method, Some(distances.band()));
    manifest.alpha = Some(gcfg.alpha);
    manifest.k = Some(gcfg.k);
    manifest.epochs = tcfg.epochs;
    manifest.batch_size = Some(tcfg.batch_size);
    manifest.lr = Some(tcfg.lr);
    manifest.weight_decay = Some(tcfg.weight_decay);
    manifest.seed = tcfg.seed;
    manifest.inference = ANCHORED_INFERENCE.into();
    manifest.loss_history = losses;
    manifest.train_seconds = start.elapsed().as_secs_f64();
    Ok(Trained { model, manifest })
}

const PREDICT_STREAM: u64 = 0x9E3D;

/// Classifies every index in `split.test_idx`.
///
/// Test nodes fill the unlabeled half of each batch in groups of `m/2`;
/// the other half is a fresh class-balanced draw of labeled anchors. A
/// short final group is padded with repeated anchors whose outputs are
/// discarded. Eval-mode batch norm is used throughout.
pub fn predict(
    model: &Model,
    data: &Dataset,
    split: &SemiSplit,
    distances: DistanceSource<'_>,
    gcfg: &GraphConfig,
    m: usize,
) -> Result<Vec<usize>> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::InvalidArgument(format!("batch size must be even, got {m}")));
    }
    let half = m / 2;
    let mut out = Vec::with_capacity(split.test_idx.len());
    for (ci, chunk) in split.test_idx.chunks(half).enumerate() {
        let mut rng = rng::substream(&[gcfg.seed, PREDICT_STREAM, ci as u64]);
        let (anchors, _) = labeled_half(data, split, half, &mut rng)?;
        let mut idx = anchors.clone();
        idx.extend_from_slice(chunk);
        idx.extend((0..half - chunk.len()).map(|j| anchors[j % anchors.len()]));
        let block = distances.block(data, &idx)?;
        let graph = build_graph(&block, m, gcfg, (1u64 << 40) + ci as u64)?;
        let logits = model.forward_eval(&batch_input(data, &idx)?, &graph)?;
        let classes = argmax_rows(&logits, model.n_classes());
        out.extend_from_slice(&classes[half..half + chunk.len()]);
    }
    Ok(out)
}

/// Label of the nearest labeled instance under banded DTW; ties go to the
/// lowest training index.
pub fn one_nn_dtw(train_labeled: &Dataset, test: &Dataset, band: WarpBand) -> Result<Vec<usize>> {
    if train_labeled.is_empty() {
        return Err(Error::NoSupervision);
    }
    if train_labeled.series_len() != test.series_len() {
        return Err(Error::LengthMismatch {
            left: train_labeled.series_len(),
            right: test.series_len(),
        });
    }
    let r = band.radius_for(test.series_len());
    test.instances()
        .iter()
        .map(|q| {
            let mut best = (f64::INFINITY, 0usize);
            for (i, s) in train_labeled.instances().iter().enumerate() {
                let d = dtw_unchecked(q.values(), s.values(), r);
                if d < best.0 {
                    best = (d, i);
                }
            }
            train_labeled.label(best.1).ok_or(Error::NoSupervision)
        })
        .collect()
}

/// Window used by the 1NN-DTW baseline: `min(L, 100)`.
pub fn default_one_nn_band(len: usize) -> WarpBand {
    WarpBand::Radius(len.min(100))
}

/// Everything needed to run one method end to end on a dataset.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub method: Method,
    pub graph: GraphConfig,
    pub train: TrainConfig,
    pub band: WarpBand,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub model: Option<Model>,
    pub manifest: RunManifest,
}

/// Runs `exp` on a prepared split. For the graph methods the whole-dataset
/// matrix is computed here (unless supplied) and sliced per batch.
pub fn run(data: &Dataset, split: &SemiSplit, exp: &Experiment, matrix: Option<&DistanceMatrix>) -> Result<Outcome> {
    let truth: Vec<usize> = split
        .test_idx
        .iter()
        .map(|&i| data.label(i).ok_or_else(|| Error::InvalidArgument("test labels required to score".into())))
        .collect::<Result<_>>()?;
    if exp.method == Method::OneNnDtw {
        let start = Instant::now();
        let preds = one_nn_dtw(&data.subset(&split.labeled_idx), &data.subset(&split.test_idx), exp.band)?;
        let mut manifest = RunManifest::skeleton(data, split, exp.method, Some(exp.band));
        manifest.dataset = exp.name.clone();
        manifest.seed = exp.train.seed;
        manifest.train_seconds = start.elapsed().as_secs_f64();
        manifest.accuracy = Some(accuracy(&preds, &truth)?);
        manifest.predictions = preds;
        return Ok(Outcome { model: None, manifest });
    }

    let kind = exp.method.matrix_kind().expect("graph method");
    let start = Instant::now();
    let owned;
    let matrix = match matrix {
        Some(m) => m,
        None => {
            owned = pairwise_series(data.instances(), kind, exp.band, exp.workers)?;
            &owned
        }
    };
    let matrix_seconds = start.elapsed().as_secs_f64();
    let source = DistanceSource::Precomputed(matrix);
    let trained = train(data, split, source, exp.method, &exp.graph, &exp.train)?;
    let mut manifest = trained.manifest;
    manifest.dataset = exp.name.clone();
    manifest.matrix_seconds = matrix_seconds;
    if exp.train.epochs > 0 {
        let preds = predict(&trained.model, data, split, source, &exp.graph, exp.train.batch_size)?;
        manifest.accuracy = Some(accuracy(&preds, &truth)?);
        manifest.predictions = preds;
    }
    Ok(Outcome {
        model: Some(trained.model),
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_semi_split, transductive_split};

    fn toy(labels: &[usize], n_classes: usize, len: usize) -> Dataset {
        let inst = labels
            .iter()
            .enumerate()
            .map(|(i, &c)| TimeSeries::new((0..len).map(|t| (c as f64) * ((t + i) as f64 * 0.3).sin()).collect()).unwrap())
            .collect();
        Dataset::new(inst, labels.iter().map(|&c| Some(c)).collect(), n_classes).unwrap()
    }

    #[test]
    fn batch_composition_default_size() {
        let labels: Vec<usize> = (0..200).map(|i| i % 2 + 1).collect();
        let d = toy(&labels, 2, 8);
        let split = transductive_split(&d, 0.8, 30, 1).unwrap();
        let b = sample_batch(&d, &split, 128, &mut rng::stream(0)).unwrap();
        assert_eq!(b.len(), 128);
        assert_eq!(b.labeled_mask.iter().filter(|&&x| x).count(), 64);
        let ones = b.labels.iter().filter(|l| **l == Some(1)).count();
        assert_eq!(ones, 32);
        for (&i, &lab) in b.indices[..64].iter().zip(&b.labeled_mask) {
            assert!(lab && split.labeled_idx.contains(&i));
        }
        for &i in &b.indices[64..] {
            assert!(split.unlabeled_idx.contains(&i) || split.test_idx.contains(&i));
        }
    }

    #[test]
    fn tiny_pool_is_sampled_with_replacement() {
        let d = toy(&[1, 2, 1, 2], 2, 8);
        let split = make_semi_split(&d, 1, 3).unwrap();
        let b = sample_batch(&d, &split, 4, &mut rng::stream(1)).unwrap();
        let mut lab: Vec<usize> = b.indices[..2].to_vec();
        lab.sort_unstable();
        let mut expect = split.labeled_idx.clone();
        expect.sort_unstable();
        assert_eq!(lab, expect);
        let b = sample_batch(&d, &split, 8, &mut rng::stream(1)).unwrap();
        assert_eq!(b.labels.iter().filter(|l| **l == Some(1)).count(), 2);
        assert!(b.indices[..4].iter().all(|i| split.labeled_idx.contains(i)));
    }

    #[test]
    fn remainder_is_spread_over_classes() {
        let labels: Vec<usize> = (0..90).map(|i| i % 3 + 1).collect();
        let d = toy(&labels, 3, 8);
        let split = make_semi_split(&d, 10, 0).unwrap();
        let b = sample_batch(&d, &split, 16, &mut rng::stream(4)).unwrap();
        let mut counts = [0; 3];
        for l in b.labels.iter().flatten() {
            counts[l - 1] += 1;
        }
        counts.sort_unstable();
        assert_eq!(counts, [2, 3, 3]);
    }

    #[test]
    fn same_seed_same_batch() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2 + 1).collect();
        let d = toy(&labels, 2, 8);
        let split = transductive_split(&d, 0.8, 5, 7).unwrap();
        let a = sample_batch(&d, &split, 16, &mut rng::stream(9)).unwrap();
        let b = sample_batch(&d, &split, 16, &mut rng::stream(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_labeled_pool_is_rejected() {
        let d = toy(&[1, 2], 2, 8);
        let split = SemiSplit {
            labeled_idx: vec![],
            unlabeled_idx: vec![0, 1],
            test_idx: vec![],
            beta: 1,
            seed: 0,
        };
        assert!(matches!(sample_batch(&d, &split, 4, &mut rng::stream(0)), Err(Error::NoSupervision)));
        assert!(matches!(sample_batch(&d, &split, 3, &mut rng::stream(0)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn one_nn_examples() {
        let d = toy(&[1, 2, 1], 2, 10);
        let train = d.subset(&[0, 1]);
        let test = d.subset(&[1, 0]);
        assert_eq!(one_nn_dtw(&train, &test, WarpBand::Radius(3)).unwrap(), vec![2, 1]);
        let single = d.subset(&[1]);
        assert_eq!(one_nn_dtw(&single, &d, WarpBand::Unconstrained).unwrap(), vec![2, 2, 2]);
        assert_eq!(default_one_nn_band(500), WarpBand::Radius(100));
        assert_eq!(default_one_nn_band(64), WarpBand::Radius(64));
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2 + 1).collect();
        let d = toy(&labels, 2, 8);
        let split = transductive_split(&d, 0.8, 2, 0).unwrap();
        let m = pairwise_series(d.instances(), DistanceKind::Dtw, WarpBand::Unconstrained, 1).unwrap();
        let err = train(
            &d,
            &split,
            DistanceSource::Precomputed(&m),
            Method::LbSimTsc,
            &GraphConfig::new(11.0, 3, 0),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::KindMismatch { .. }));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2 + 1).collect();
        let d = toy(&labels, 2, 8);
        let split = transductive_split(&d, 0.8, 2, 0).unwrap();
        let tcfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let exp = Experiment {
            name: "toy".into(),
            method: Method::LbSimTsc,
            graph: GraphConfig::new(11.0, 3, 0),
            train: tcfg.clone(),
            band: WarpBand::Radius(1),
            workers: 1,
        };
        let out = run(&d, &split, &exp, None).unwrap();
        assert_eq!(out.model.unwrap(), Model::init(ModelConfig::standard(2), 5));
        assert_eq!(out.manifest.accuracy, None);
        assert!(out.manifest.loss_history.is_empty());
    }

    #[test]
    fn manifest_field_names_are_stable() {
        let d = toy(&[1, 2], 2, 8);
        let split = make_semi_split(&d, 1, 0).unwrap();
        let m = RunManifest::skeleton(&d, &split, Method::LbSimTsc, Some(WarpBand::Radius(3)));
        let v = serde_json::to_value(&m).unwrap();
        for key in [
            "dataset",
            "method",
            "beta",
            "seed",
            "alpha",
            "k",
            "r",
            "epochs",
            "matrix_seconds",
            "train_seconds",
            "accuracy",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["method"], "lb-simtsc");
    }
}
