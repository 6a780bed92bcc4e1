//! Batch graph construction from a distance submatrix.
//!
//! Each row is converted to similarities `exp(-alpha * d)`. When at least
//! `k` entries of the row are exactly zero, `k` of them are drawn uniformly
//! and weighted `1/k`; otherwise the `k` most similar entries are kept with
//! their similarities as weights. Rows are then normalized to sum to one.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub alpha: f64,
    pub k: usize,
    pub seed: u64,
    /// Drop the row's own index from the zero-distance candidate set.
    #[serde(default)]
    pub exclude_self: bool,
}

impl GraphConfig {
    /// Neighbor count 3 and the scaling factor used with LB_Keogh matrices.
    pub const LB_ALPHA: f64 = 11.0;
    /// Scaling factor used with DTW matrices.
    pub const DTW_ALPHA: f64 = 0.3;
    pub const DEFAULT_K: usize = 3;

    pub fn new(alpha: f64, k: usize, seed: u64) -> Self {
        Self {
            alpha,
            k,
            seed,
            exclude_self: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub to: usize,
    pub w: f64,
}

/// Sparse row-stochastic directed graph over the `m` nodes of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchGraph {
    pub m: usize,
    pub k: usize,
    pub alpha: f64,
    pub edges: Vec<Vec<Edge>>,
}

impl BatchGraph {
    /// Every node linked only to itself.
    pub fn identity(m: usize) -> Self {
        Self {
            m,
            k: 1,
            alpha: 0.0,
            edges: (0..m).map(|i| vec![Edge { to: i, w: 1.0 }]).collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m * self.m];
        for (i, row) in self.edges.iter().enumerate() {
            for e in row {
                out[i * self.m + e.to] += e.w;
            }
        }
        out
    }

    /// `E · X` for row-major `X` of shape `m x width`.
    pub fn aggregate(&self, x: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.m * width];
        for (i, row) in self.edges.iter().enumerate() {
            let dst = &mut out[i * width..(i + 1) * width];
            for e in row {
                let src = &x[e.to * width..(e.to + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += e.w * s;
                }
            }
        }
        out
    }

    /// `Eᵀ · X` for row-major `X` of shape `m x width`.
    pub fn aggregate_transpose(&self, x: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.m * width];
        for (i, row) in self.edges.iter().enumerate() {
            let src = &x[i * width..(i + 1) * width];
            for e in row {
                let dst = &mut out[e.to * width..(e.to + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += e.w * s;
                }
            }
        }
        out
    }

    /// Row `i` permuted as `perm[i]` → new index.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut edges = vec![Vec::new(); self.m];
        for (i, row) in self.edges.iter().enumerate() {
            let mut r: Vec<Edge> = row.iter().map(|e| Edge { to: perm[e.to], w: e.w }).collect();
            r.sort_by_key(|e| e.to);
            edges[perm[i]] = r;
        }
        Self { edges, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

pub fn to_similarity(d_row: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    d_row
        .iter()
        .map(|&d| {
            if d >= 0.0 && d.is_finite() {
                Ok((-alpha * d).exp())
            } else {
                Err(Error::InvalidDistance(d))
            }
        })
        .collect()
}

/// Which branch picked a row's neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    ZeroDistance,
    TopK,
}

/// Picks `k` neighbors for one row and returns them with pre-normalization
/// weights, sorted by index. `skip` removes one index from consideration.
///
/// Top-k ranking is by similarity, then by distance, then lowest index.
/// The distance key only matters when similarities tie (for example
/// `alpha = 0` or underflow).
pub fn select_neighbors(
    d_row: &[f64],
    a_row: &[f64],
    k: usize,
    rng: &mut Stream,
    skip: Option<usize>,
) -> Result<(Selection, Vec<(usize, f64)>)> {
    let candidates: Vec<usize> = (0..d_row.len()).filter(|&j| Some(j) != skip).collect();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if candidates.len() < k {
        return Err(Error::KTooLarge {
            k,
            m: candidates.len(),
        });
    }
    if a_row.len() != d_row.len() {
        return Err(Error::LengthMismatch {
            left: d_row.len(),
            right: a_row.len(),
        });
    }
    let mut zeros: Vec<usize> = candidates.iter().copied().filter(|&j| d_row[j] == 0.0).collect();
    if zeros.len() >= k {
        // Partial Fisher–Yates: the first k slots become a uniform k-subset.
        for i in 0..k {
            let j = rng.random_range(i..zeros.len());
            zeros.swap(i, j);
        }
        let mut picked: Vec<usize> = zeros[..k].to_vec();
        picked.sort_unstable();
        let w = 1.0 / k as f64;
        return Ok((Selection::ZeroDistance, picked.into_iter().map(|j| (j, w)).collect()));
    }
    let mut order = candidates;
    order.sort_by(|&x, &y| {
        a_row[y]
            .partial_cmp(&a_row[x])
            .unwrap_or(Ordering::Equal)
            .then(d_row[x].partial_cmp(&d_row[y]).unwrap_or(Ordering::Equal))
            .then(x.cmp(&y))
    });
    order.truncate(k);
    order.sort_unstable();
    Ok((Selection::TopK, order.into_iter().map(|j| (j, a_row[j])).collect()))
}

/// Normalizes one row's selection into edges.
///
/// If every selected similarity underflows, the top-k weights are
/// recomputed as `exp(-alpha (d_j - d_min))`, which has the same ratios.
fn normalize_row(sel: Selection, picked: &[(usize, f64)], d_row: &[f64], alpha: f64) -> Vec<Edge> {
    match sel {
        Selection::ZeroDistance => {
            let w = 1.0 / picked.len() as f64;
            picked.iter().map(|&(to, _)| Edge { to, w }).collect()
        }
        Selection::TopK => {
            let raw_sum: f64 = picked.iter().map(|p| p.1).sum();
            let weights: Vec<f64> = if raw_sum > f64::MIN_POSITIVE {
                picked.iter().map(|p| p.1).collect()
            } else {
                let dmin = picked.iter().map(|p| d_row[p.0]).fold(f64::INFINITY, f64::min);
                picked.iter().map(|p| (-alpha * (d_row[p.0] - dmin)).exp()).collect()
            };
            let sum: f64 = weights.iter().sum();
            picked
                .iter()
                .zip(weights)
                .filter(|(_, w)| *w > 0.0)
                .map(|(&(to, _), w)| Edge { to, w: w / sum })
                .collect()
        }
    }
}

/// Builds the graph for one row of a batch. `row` is the row's position
/// within the batch and selects the random stream along with `batch_id`.
pub fn build_row(d_row: &[f64], row: usize, cfg: &GraphConfig, batch_id: u64) -> Result<Vec<Edge>> {
    let a_row = to_similarity(d_row, cfg.alpha)?;
    let mut rng = rng::substream(&[cfg.seed, batch_id, row as u64]);
    let skip = cfg.exclude_self.then_some(row);
    let (sel, picked) = select_neighbors(d_row, &a_row, cfg.k, &mut rng, skip)?;
    Ok(normalize_row(sel, &picked, d_row, cfg.alpha))
}

/// Builds the graph of an `m x m` row-major distance block.
pub fn build_graph(d_batch: &[f64], m: usize, cfg: &GraphConfig, batch_id: u64) -> Result<BatchGraph> {
    if d_batch.len() != m * m {
        return Err(Error::ShapeError(format!(
            "distance block has {} entries, expected {m}x{m}",
            d_batch.len()
        )));
    }
    let edges = d_batch
        .chunks(m.max(1))
        .enumerate()
        .map(|(i, row)| build_row(row, i, cfg, batch_id))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchGraph {
        m,
        k: cfg.k,
        alpha: cfg.alpha,
        edges,
    })
}
