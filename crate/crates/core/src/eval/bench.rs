use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeries;
use crate::distance::{pairwise_series, DistanceKind, WarpBand};
use crate::error::{Error, Result};
use crate::rng;

/// Wall-clock comparison of full pairwise DTW against pairwise LB_Keogh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub len: usize,
    pub n: usize,
    /// LB_Keogh radius; DTW runs unconstrained.
    pub radius: usize,
    pub workers: usize,
    pub dtw_seconds: f64,
    pub lb_seconds: f64,
    /// `dtw_seconds / lb_seconds`
    pub speedup: f64,
    /// Off-diagonal entries computed per method.
    pub pairs_computed: usize,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "n,len,radius,workers,dtw_seconds,lb_seconds,speedup";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.3}",
            self.n, self.len, self.radius, self.workers, self.dtw_seconds, self.lb_seconds, self.speedup
        )
    }
}

/// `n` seeded Gaussian random walks of length `len`, z-normalized.
pub fn random_walks(n: usize, len: usize, seed: u64) -> Vec<TimeSeries> {
    (0..n)
        .map(|i| {
            let mut r = rng::substream(&[seed, i as u64]);
            let mut acc = 0.0;
            let walk: Vec<f64> = (0..len)
                .map(|_| {
                    let step: f64 = StandardNormal.sample(&mut r);
                    acc += step;
                    acc
                })
                .collect();
            TimeSeries::new(walk).expect("finite walk").z_normalized()
        })
        .collect()
}

fn time_min(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best.max(1e-9))
}

/// Times both pairwise computations on the same random walks with the same
/// worker count, keeping the fastest of `repeats` runs of each.
pub fn bench_graph_construction(
    n: usize,
    len: usize,
    r_frac: f64,
    workers: usize,
    seed: u64,
    repeats: usize,
) -> Result<BenchReport> {
    if n < 2 || len < 8 {
        return Err(Error::InvalidArgument(format!("bench needs n >= 2 and len >= 8, got n={n}, len={len}")));
    }
    let series = random_walks(n, len, seed);
    let band = WarpBand::from_fraction(r_frac, len);
    let radius = band.radius_for(len);
    let dtw_seconds = time_min(repeats, || {
        pairwise_series(&series, DistanceKind::Dtw, WarpBand::Unconstrained, workers).map(drop)
    })?;
    let lb_seconds = time_min(repeats, || pairwise_series(&series, DistanceKind::LbKeogh, band, workers).map(drop))?;
    Ok(BenchReport {
        len,
        n,
        radius,
        workers,
        dtw_seconds,
        lb_seconds,
        speedup: dtw_seconds / lb_seconds,
        pairs_computed: n * (n - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walks_are_normalized_and_seeded() {
        let a = random_walks(3, 50, 1);
        assert_eq!(a, random_walks(3, 50, 1));
        assert_ne!(a, random_walks(3, 50, 2));
        for s in &a {
            let mean: f64 = s.values().iter().sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn two_series_report() {
        let r = bench_graph_construction(2, 16, 0.05, 1, 0, 1).unwrap();
        assert_eq!(r.pairs_computed, 2);
        assert_eq!(r.speedup, r.dtw_seconds / r.lb_seconds);
        assert!(r.dtw_seconds > 0.0 && r.lb_seconds > 0.0);
        assert_eq!(r.radius, 1);
        assert!(bench_graph_construction(1, 16, 0.05, 1, 0, 1).is_err());
        assert!(bench_graph_construction(4, 7, 0.05, 1, 0, 1).is_err());
    }

    #[test]
    fn csv_row_has_header_arity() {
        let r = bench_graph_construction(3, 8, 0.1, 2, 0, 1).unwrap();
        assert_eq!(r.csv_row().split(',').count(), BenchReport::CSV_HEADER.split(',').count());
    }
}
