//! Scoring, paired significance tests and the graph-construction benchmark.

mod bench;
mod wilcoxon;

pub use bench::{bench_graph_construction, random_walks, BenchReport};
pub use wilcoxon::{exact_upper_tail, read_pairs_csv, signed_rank, wilcoxon, PairedResults, Side, SignedRank};

use crate::error::{Error, Result};

/// Fraction of positions where `pred` equals `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyData);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}
