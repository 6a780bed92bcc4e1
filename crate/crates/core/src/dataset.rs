//! UCR-format ingestion, train/test splits and labeled/unlabeled partitions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A univariate real-valued series. Always non-empty and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries(Vec<f64>);

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyData);
        }
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value {v}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Per-instance z-normalization. Constant series map to all zeros.
    pub fn z_normalized(&self) -> Self {
        let n = self.0.len() as f64;
        let mean = self.0.iter().sum::<f64>() / n;
        let var = self.0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd < 1e-12 {
            return Self(vec![0.0; self.0.len()]);
        }
        Self(self.0.iter().map(|v| (v - mean) / sd).collect())
    }
}

/// A collection of equal-length series with optional class ids in `1..=n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<TimeSeries>,
    labels: Vec<Option<usize>>,
    n_classes: usize,
    /// `raw_labels[c - 1]` is the label string-value that was mapped to class `c`.
    raw_labels: Vec<i64>,
}

impl Dataset {
    pub fn new(instances: Vec<TimeSeries>, labels: Vec<Option<usize>>, n_classes: usize) -> Result<Self> {
        let raw = (1..=n_classes as i64).collect();
        Self::with_raw_labels(instances, labels, n_classes, raw)
    }

    pub fn with_raw_labels(
        instances: Vec<TimeSeries>,
        labels: Vec<Option<usize>>,
        n_classes: usize,
        raw_labels: Vec<i64>,
    ) -> Result<Self> {
        let Some(first) = instances.first() else {
            return Err(Error::EmptyData);
        };
        let len = first.len();
        if let Some(bad) = instances.iter().find(|s| s.len() != len) {
            return Err(Error::LengthMismatch {
                left: len,
                right: bad.len(),
            });
        }
        if labels.len() != instances.len() {
            return Err(Error::LengthMismatch {
                left: instances.len(),
                right: labels.len(),
            });
        }
        if let Some(c) = labels.iter().flatten().find(|&&c| c == 0 || c > n_classes) {
            return Err(Error::InvalidArgument(format!(
                "class id {c} outside 1..={n_classes}"
            )));
        }
        if raw_labels.len() != n_classes {
            return Err(Error::InvalidArgument("raw label table size".into()));
        }
        Ok(Self {
            instances,
            labels,
            n_classes,
            raw_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.instances[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn instances(&self) -> &[TimeSeries] {
        &self.instances
    }

    pub fn series(&self, i: usize) -> &TimeSeries {
        &self.instances[i]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn raw_labels(&self) -> &[i64] {
        &self.raw_labels
    }

    /// Mapping from class id to the raw label found in the file.
    pub fn label_map(&self) -> BTreeMap<usize, i64> {
        self.raw_labels
            .iter()
            .enumerate()
            .map(|(i, &r)| (i + 1, r))
            .collect()
    }

    /// Instances at `idx`, in that order, with the class table preserved.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            instances: idx.iter().map(|&i| self.instances[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            raw_labels: self.raw_labels.clone(),
        }
    }

    pub fn z_normalized(&self) -> Self {
        Self {
            instances: self.instances.iter().map(TimeSeries::z_normalized).collect(),
            ..self.clone()
        }
    }

    /// Returns a copy whose labels at `idx` are replaced.
    pub fn with_labels_at(&self, idx: &[usize], label: Option<usize>) -> Self {
        let mut out = self.clone();
        for &i in idx {
            out.labels[i] = label;
        }
        out
    }

    fn require_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| l.ok_or_else(|| Error::InvalidArgument("dataset is not fully labeled".into())))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Auto,
    Tab,
    Comma,
}

impl Delimiter {
    fn detect(line: &str) -> Self {
        if line.contains('\t') {
            Delimiter::Tab
        } else if line.contains(',') {
            Delimiter::Comma
        } else {
            // Whitespace-separated files are handled by the tab splitter.
            Delimiter::Tab
        }
    }

    fn split<'a>(self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            _ => line.split_whitespace().collect(),
        }
    }
}

fn parse_raw_label(field: &str, line: usize) -> Result<i64> {
    let bad = || Error::ParseError {
        line,
        col: 1,
        field: field.to_string(),
    };
    if let Ok(v) = field.parse::<i64>() {
        return Ok(v);
    }
    let v: f64 = field.parse().map_err(|_| bad())?;
    if !v.is_finite() || v.fract() != 0.0 || v.abs() > 9.0e15 {
        return Err(bad());
    }
    Ok(v as i64)
}

/// Parses UCR text: one instance per line, label first.
pub fn parse_ucr(text: &str, delimiter: Delimiter) -> Result<Dataset> {
    let mut delim = delimiter;
    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    let mut expected = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if delim == Delimiter::Auto {
            delim = Delimiter::detect(line);
        }
        let fields = delim.split(line);
        let width = *expected.get_or_insert(fields.len());
        if fields.len() != width {
            return Err(Error::RaggedData {
                line: lineno,
                expected: width,
                found: fields.len(),
            });
        }
        if width < 2 {
            return Err(Error::ParseError {
                line: lineno,
                col: 2,
                field: String::new(),
            });
        }
        let raw = parse_raw_label(fields[0], lineno)?;
        let values = fields[1..]
            .iter()
            .enumerate()
            .map(|(c, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::ParseError {
                        line: lineno,
                        col: c + 2,
                        field: f.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((raw, values));
    }
    if rows.is_empty() {
        return Err(Error::EmptyData);
    }

    let distinct: BTreeSet<i64> = rows.iter().map(|(r, _)| *r).collect();
    let raw_labels: Vec<i64> = distinct.into_iter().collect();
    let class_of = |r: i64| raw_labels.binary_search(&r).map(|i| i + 1).ok();
    let labels = rows.iter().map(|(r, _)| class_of(*r)).collect();
    let instances = rows
        .into_iter()
        .map(|(_, v)| TimeSeries::new(v))
        .collect::<Result<Vec<_>>>()?;
    let n_classes = raw_labels.len();
    Dataset::with_raw_labels(instances, labels, n_classes, raw_labels)
}

pub fn load_ucr(path: impl AsRef<Path>, delimiter: Delimiter) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ucr(&text, delimiter)
}

/// Fisher–Yates shuffle driven by the crate's seeded stream.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut rng::Stream) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Index form of [`split_train_test`]: `(train_idx, test_idx)` into `d`.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    let n_train = (train_frac * n as f64).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::DegenerateSplit { n, train_frac });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    shuffle(&mut perm, &mut rng::stream(seed));
    let test = perm.split_off(n_train);
    Ok((perm, test))
}

/// Unstratified uniform split: the first `ceil(train_frac * n)` entries of a
/// seeded permutation become the training set.
pub fn split_train_test(d: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    d.require_labels()?;
    let (train, test) = split_indices(d.len(), train_frac, seed)?;
    Ok((d.subset(&train), d.subset(&test)))
}

/// Labeled / unlabeled / test partition of a dataset's indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemiSplit {
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub beta: usize,
    pub seed: u64,
}

impl SemiSplit {
    /// Rewrites local indices (into a subset) as indices into the parent
    /// dataset, where `parent_idx[local] = parent`.
    pub fn remap(&self, parent_idx: &[usize]) -> Self {
        let map = |v: &[usize]| v.iter().map(|&i| parent_idx[i]).collect();
        Self {
            labeled_idx: map(&self.labeled_idx),
            unlabeled_idx: map(&self.unlabeled_idx),
            test_idx: map(&self.test_idx),
            beta: self.beta,
            seed: self.seed,
        }
    }

    /// Labeled indices grouped by class (index 0 holds class 1).
    pub fn labeled_by_class(&self, d: &Dataset) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); d.n_classes()];
        for &i in &self.labeled_idx {
            if let Some(c) = d.label(i) {
                pools[c - 1].push(i);
            }
        }
        pools
    }

    pub fn check_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self
            .labeled_idx
            .iter()
            .chain(&self.unlabeled_idx)
            .chain(&self.test_idx)
        {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Samples exactly `beta` labeled instances per class without replacement.
/// `test_idx` is left empty for the caller to fill.
pub fn make_semi_split(train: &Dataset, beta: usize, seed: u64) -> Result<SemiSplit> {
    if beta == 0 {
        return Err(Error::InvalidArgument("beta must be at least 1".into()));
    }
    let labels = train.require_labels()?;
    let mut by_class = vec![Vec::new(); train.n_classes()];
    for (i, c) in labels.iter().enumerate() {
        by_class[c - 1].push(i);
    }
    let mut labeled = Vec::with_capacity(beta * by_class.len());
    for (c, pool) in by_class.iter_mut().enumerate() {
        if pool.len() < beta {
            return Err(Error::InsufficientLabels {
                class: c + 1,
                available: pool.len(),
                requested: beta,
            });
        }
        let mut rng = rng::substream(&[seed, c as u64]);
        shuffle(pool, &mut rng);
        let mut chosen = pool[..beta].to_vec();
        chosen.sort_unstable();
        labeled.extend(chosen);
    }
    let mut is_labeled = vec![false; train.len()];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let unlabeled = (0..train.len()).filter(|&i| !is_labeled[i]).collect();
    Ok(SemiSplit {
        labeled_idx: labeled,
        unlabeled_idx: unlabeled,
        test_idx: Vec::new(),
        beta,
        seed,
    })
}

/// Full transductive partition over `d`: train/test split followed by the
/// per-class labeled sample. Indices refer to `d`.
pub fn transductive_split(d: &Dataset, train_frac: f64, beta: usize, seed: u64) -> Result<SemiSplit> {
    d.require_labels()?;
    let (train_idx, test_idx) = split_indices(d.len(), train_frac, seed)?;
    let train = d.subset(&train_idx);
    let mut split = make_semi_split(&train, beta, seed)?.remap(&train_idx);
    split.test_idx = test_idx;
    Ok(split)
}

/// Two-class toy problem: class 1 is flat noise, class 2 carries one
/// Gaussian bump whose position (within ±8% of the length around the
/// middle) and width vary per instance, so matching bumps needs some
/// warping. Classes alternate by index.
pub fn synthetic_warped_bumps(n: usize, len: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || len == 0 {
        return Err(Error::EmptyData);
    }
    let mut instances = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::substream(&[seed, 0xB0B, i as u64]);
        let class = i % 2 + 1;
        let (center, width, height) = if class == 2 {
            (
                r.random_range(0.42..0.58) * len as f64,
                r.random_range(0.04..0.1) * len as f64,
                r.random_range(2.0..3.0),
            )
        } else {
            (0.0, 1.0, 0.0)
        };
        let values = (0..len)
            .map(|t| {
                let z = (t as f64 - center) / width;
                let noise: f64 = StandardNormal.sample(&mut r);
                height * (-0.5 * z * z).exp() + 0.1 * noise
            })
            .collect();
        instances.push(TimeSeries::new(values)?);
        labels.push(Some(class));
    }
    Dataset::new(instances, labels, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: &[usize], n_classes: usize) -> Dataset {
        let inst = labels
            .iter()
            .enumerate()
            .map(|(i, _)| TimeSeries::new(vec![i as f64, 0.0]).unwrap())
            .collect();
        Dataset::new(inst, labels.iter().map(|&c| Some(c)).collect(), n_classes).unwrap()
    }

    #[test]
    fn single_line_remaps_to_class_one() {
        let d = parse_ucr("2\t0.1\t-0.3\t0.2\n", Delimiter::Auto).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.series_len(), 3);
        assert_eq!(d.label(0), Some(1));
        assert_eq!(d.n_classes(), 1);
        assert_eq!(d.raw_labels(), &[2]);
        assert_eq!(d.series(0).values(), &[0.1, -0.3, 0.2]);
    }

    #[test]
    fn remap_preserves_sorted_raw_order() {
        let d = parse_ucr("3,1.0,2.0\n1,0.5,0.5\n", Delimiter::Auto).unwrap();
        assert_eq!(d.labels(), &[Some(2), Some(1)]);
        let d = parse_ucr("-1 1.0 2.0\n1 0.5 0.5\n-1 0 0\n", Delimiter::Auto).unwrap();
        assert_eq!(d.labels(), &[Some(1), Some(2), Some(1)]);
    }

    #[test]
    fn float_formatted_labels_are_accepted() {
        let d = parse_ucr("1.0000000e+00\t1\t2\n2.0\t3\t4\n", Delimiter::Auto).unwrap();
        assert_eq!(d.raw_labels(), &[1, 2]);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = parse_ucr("1\t1\t2\t3\n1\t1\t2\t3\t4\n", Delimiter::Tab).unwrap_err();
        assert!(matches!(err, Error::RaggedData { line: 2, .. }), "{err}");
    }

    #[test]
    fn non_numeric_field_reports_position() {
        let err = parse_ucr("1,1,2\n1,x,2\n", Delimiter::Comma).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 2, col: 2, .. }), "{err}");
        let err = parse_ucr("1,1,nan\n", Delimiter::Comma).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 1, col: 3, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(parse_ucr("\n\n", Delimiter::Auto), Err(Error::EmptyData)));
    }

    #[test]
    fn eighty_twenty_split() {
        let d = toy(&[1; 10], 1);
        let (tr, te) = split_train_test(&d, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, te2) = split_train_test(&d, 0.8, 3).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
    }

    #[test]
    fn singleton_split_is_degenerate() {
        let d = toy(&[1], 1);
        assert!(matches!(split_train_test(&d, 0.8, 0), Err(Error::DegenerateSplit { .. })));
    }

    #[test]
    fn semi_split_counts() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3 + 1).collect();
        let d = toy(&labels, 3);
        let s = make_semi_split(&d, 5, 11).unwrap();
        assert_eq!(s.labeled_idx.len(), 15);
        for pool in s.labeled_by_class(&d) {
            assert_eq!(pool.len(), 5);
        }
        assert!(s.check_partition(d.len()));
    }

    #[test]
    fn semi_split_insufficient_class() {
        let mut labels = vec![1; 10];
        labels.extend([2; 4]);
        let d = toy(&labels, 2);
        let err = make_semi_split(&d, 5, 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientLabels { class: 2, available: 4, .. }));
    }

    #[test]
    fn standard_beta_settings_accepted() {
        let labels: Vec<usize> = (0..80).map(|i| i % 2 + 1).collect();
        let d = toy(&labels, 2);
        for beta in [5, 10, 15, 20, 25, 30] {
            let s = make_semi_split(&d, beta, 1).unwrap();
            assert_eq!(s.labeled_idx.len(), 2 * beta);
        }
    }

    #[test]
    fn transductive_split_covers_everything() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2 + 1).collect();
        let d = toy(&labels, 2);
        let s = transductive_split(&d, 0.8, 5, 42).unwrap();
        assert_eq!(s.test_idx.len(), 10);
        assert_eq!(s.labeled_idx.len(), 10);
        assert!(s.check_partition(50));
        for &i in &s.labeled_idx {
            assert!(!s.test_idx.contains(&i));
        }
    }

    #[test]
    fn synthetic_bumps_are_balanced_and_seeded() {
        let d = synthetic_warped_bumps(10, 64, 3).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.series_len(), 64);
        assert_eq!(d.labels().iter().filter(|l| **l == Some(2)).count(), 5);
        assert_eq!(d, synthetic_warped_bumps(10, 64, 3).unwrap());
        let peak = |i: usize| d.series(i).values().iter().copied().fold(f64::MIN, f64::max);
        assert!(peak(1) > 1.5 && peak(0) < 0.6);
    }
}
