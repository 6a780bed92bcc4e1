//! DTW, LB_Keogh envelopes and bounds, and full pairwise matrices.

mod matrix;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use matrix::{load_matrix, pairwise, pairwise_series, save_matrix, DistanceKind, DistanceMatrix, HEADER_LEN};

/// Sakoe–Chiba band radius in timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarpBand {
    Radius(usize),
    Unconstrained,
}

impl WarpBand {
    /// `floor(frac * len)`, at least 1.
    pub fn from_fraction(frac: f64, len: usize) -> Self {
        let r = (frac * len as f64).floor() as usize;
        WarpBand::Radius(r.max(1))
    }

    /// The radius actually used on series of length `len`.
    pub fn radius_for(self, len: usize) -> usize {
        let max = len.saturating_sub(1);
        match self {
            WarpBand::Radius(r) => r.min(max),
            WarpBand::Unconstrained => max,
        }
    }

    /// Clamps to `len - 1`; the flag reports whether clamping happened.
    pub fn clamp(self, len: usize) -> (Self, bool) {
        match self {
            WarpBand::Radius(r) if r + 1 > len => (WarpBand::Radius(len.saturating_sub(1)), true),
            b => (b, false),
        }
    }

    pub(crate) fn to_wire(self) -> u32 {
        match self {
            WarpBand::Radius(r) => u32::try_from(r).unwrap_or(u32::MAX - 1).min(u32::MAX - 1),
            WarpBand::Unconstrained => u32::MAX,
        }
    }

    pub(crate) fn from_wire(v: u32) -> Self {
        if v == u32::MAX {
            WarpBand::Unconstrained
        } else {
            WarpBand::Radius(v as usize)
        }
    }
}

impl fmt::Display for WarpBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WarpBand::Radius(r) => write!(f, "{r}"),
            WarpBand::Unconstrained => f.write_str("unconstrained"),
        }
    }
}

/// Running max/min of a series over a `±radius` window.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub radius: usize,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }
}

/// Builds the envelope with monotone deques (Lemire's streaming min/max),
/// O(L) regardless of `radius`. The window is clamped at both ends.
pub fn envelope(x: &[f64], radius: usize) -> Envelope {
    let n = x.len();
    let r = radius.min(n.saturating_sub(1));
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut maxq: VecDeque<usize> = VecDeque::with_capacity(2 * r + 2);
    let mut minq: VecDeque<usize> = VecDeque::with_capacity(2 * r + 2);
    let mut next = 0;
    for k in 0..n {
        let hi = (k + r).min(n - 1);
        while next <= hi {
            while maxq.back().is_some_and(|&b| x[b] <= x[next]) {
                maxq.pop_back();
            }
            maxq.push_back(next);
            while minq.back().is_some_and(|&b| x[b] >= x[next]) {
                minq.pop_back();
            }
            minq.push_back(next);
            next += 1;
        }
        let lo = k.saturating_sub(r);
        while maxq.front().is_some_and(|&f| f < lo) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&f| f < lo) {
            minq.pop_front();
        }
        upper[k] = x[maxq[0]];
        lower[k] = x[minq[0]];
    }
    Envelope {
        upper,
        lower,
        radius: r,
    }
}

/// LB_Keogh: Euclidean norm of the parts of `y` lying outside `env`.
pub fn lb_keogh(env: &Envelope, y: &[f64]) -> Result<f64> {
    if env.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: env.len(),
            right: y.len(),
        });
    }
    Ok(lb_keogh_unchecked(env, y))
}

#[inline]
pub(crate) fn lb_keogh_unchecked(env: &Envelope, y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&v, &u), &l) in y.iter().zip(&env.upper).zip(&env.lower) {
        if v > u {
            acc += (v - u) * (v - u);
        } else if v < l {
            acc += (v - l) * (v - l);
        }
    }
    acc.sqrt()
}

/// Banded DTW with squared local cost and a final square root.
///
/// Uses two rolling rows, so memory is O(L); cells outside the band are
/// treated as +inf.
pub fn dtw(x: &[f64], y: &[f64], band: WarpBand) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(dtw_unchecked(x, y, band.radius_for(x.len())))
}

pub(crate) fn dtw_unchecked(x: &[f64], y: &[f64], r: usize) -> f64 {
    let n = x.len();
    let mut prev = vec![f64::INFINITY; n];
    let mut cur = vec![f64::INFINITY; n];
    for (i, &xi) in x.iter().enumerate() {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        // Cells of this row outside the band stay +inf for the next row.
        if lo > 0 {
            cur[lo - 1] = f64::INFINITY;
        }
        let mut left = f64::INFINITY;
        for j in lo..=hi {
            let d = xi - y[j];
            let cost = d * d;
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = prev[j];
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(diag).min(left)
            };
            left = cost + best;
            cur[j] = left;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n - 1].sqrt()
}


#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_radius_envelope_is_identity() {
        let e = envelope(&[1.0, 2.0, 3.0], 0);
        assert_eq!(e.upper, vec![1.0, 2.0, 3.0]);
        assert_eq!(e.lower, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn radius_one_envelope() {
        let x = [1.0, 2.0, 3.0];
        let (u, l) = envelope_naive(&x, 1);
        assert_eq!(u, vec![2.0, 3.0, 3.0]);
        assert_eq!(l, vec![1.0, 1.0, 2.0]);
        let e = envelope(&x, 1);
        assert_eq!((e.upper, e.lower), (u, l));
    }

    #[test]
    fn singleton_envelope() {
        for r in [0, 1, 50] {
            let e = envelope(&[5.0], r);
            assert_eq!((e.upper, e.lower), (vec![5.0], vec![5.0]));
        }
    }

    #[test]
    fn lb_keogh_hand_example() {
        let e = envelope(&[1.0, 2.0, 3.0], 1);
        let v = lb_keogh(&e, &[0.0, 4.0, 2.0]).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(lb_keogh(&e, &[1.5, 2.0, 2.5]).unwrap(), 0.0);
        assert!(matches!(lb_keogh(&e, &[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn dtw_enumeration_examples() {
        let a = [0.0, 1.0, 0.0];
        let b = [1.0, 0.0, 1.0];
        assert!((dtw_enumerate(&a, &b, 2) - 2f64.sqrt()).abs() < 1e-15);
        assert!((dtw(&a, &b, WarpBand::Unconstrained).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let c = [0.0, 0.0, 1.0];
        let d = [0.0, 1.0, 1.0];
        assert_eq!(dtw_enumerate(&c, &d, 2), 0.0);
        assert_eq!(dtw(&c, &d, WarpBand::Unconstrained).unwrap(), 0.0);
    }

    #[test]
    fn dtw_radius_zero_is_euclidean() {
        let a = [0.0, 1.0, 2.0, 0.5];
        let b = [1.0, 1.0, 0.0, 0.0];
        let ed = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        assert!((dtw(&a, &b, WarpBand::Radius(0)).unwrap() - ed).abs() < 1e-15);
    }

    #[test]
    fn band_helpers() {
        assert_eq!(WarpBand::from_fraction(0.05, 1024), WarpBand::Radius(51));
        assert_eq!(WarpBand::from_fraction(0.05, 10), WarpBand::Radius(1));
        assert_eq!(WarpBand::Radius(100).clamp(64), (WarpBand::Radius(63), true));
        assert_eq!(WarpBand::Radius(3).clamp(64), (WarpBand::Radius(3), false));
        assert_eq!(WarpBand::Unconstrained.radius_for(10), 9);
        assert_eq!(WarpBand::from_wire(WarpBand::Unconstrained.to_wire()), WarpBand::Unconstrained);
    }

    fn series(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, 1..max_len)
    }

    fn pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..max_len).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn envelope_contains_series_and_grows_with_radius(x in series(64), r in 0usize..20) {
            let e = envelope(&x, r);
            let wider = envelope(&x, r + 1);
            for k in 0..x.len() {
                prop_assert!(e.lower[k] <= x[k] && x[k] <= e.upper[k]);
                prop_assert!(wider.upper[k] >= e.upper[k]);
                prop_assert!(wider.lower[k] <= e.lower[k]);
            }
            prop_assert_eq!(lb_keogh(&e, &x).unwrap(), 0.0);
        }

        #[test]
        fn envelope_matches_naive(x in series(80), r in 0usize..90) {
            let e = envelope(&x, r);
            let (u, l) = envelope_naive(&x, r);
            prop_assert_eq!(e.upper, u);
            prop_assert_eq!(e.lower, l);
        }

        #[test]
        fn lb_keogh_non_increasing_in_radius((x, y) in pair(48), r in 0usize..12) {
            let a = lb_keogh(&envelope(&x, r), &y).unwrap();
            let b = lb_keogh(&envelope(&x, r + 1), &y).unwrap();
            prop_assert!(b <= a);
        }

        #[test]
        fn dtw_symmetric_and_bounded((x, y) in pair(40), r in 0usize..40) {
            let band = WarpBand::Radius(r);
            let a = dtw(&x, &y, band).unwrap();
            let b = dtw(&y, &x, band).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a >= 0.0);
            prop_assert!(lb_keogh(&envelope(&x, r), &y).unwrap() <= a + 1e-9);
            if r + 1 >= x.len() {
                prop_assert_eq!(a, dtw(&x, &y, WarpBand::Unconstrained).unwrap());
            }
        }

        #[test]
        fn dtw_matches_enumeration((x, y) in pair(7), r in 0usize..7) {
            let fast = dtw(&x, &y, WarpBand::Radius(r)).unwrap();
            let slow = dtw_enumerate(&x, &y, r.min(x.len() - 1));
            prop_assert!((fast - slow).abs() <= 1e-12, "{} vs {}", fast, slow);
        }
    }
}
