use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Paired per-dataset scores of two methods `a` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedResults {
    pub names: (String, String),
    pub scores: Vec<(String, f64, f64)>,
}

impl PairedResults {
    pub fn new(names: (String, String), scores: Vec<(String, f64, f64)>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyData);
        }
        if let Some((id, _, _)) = scores
            .iter()
            .find(|(_, a, b)| !(0.0..=1.0).contains(a) || !(0.0..=1.0).contains(b))
        {
            return Err(Error::InvalidArgument(format!("score for {id:?} outside [0, 1]")));
        }
        Ok(Self { names, scores })
    }

    /// Builds anonymous pairs from two equally long columns.
    pub fn from_columns(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let scores = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(i, (&x, &y))| (format!("d{i}"), x, y))
            .collect();
        Self::new(("a".into(), "b".into()), scores)
    }

    pub fn swapped(&self) -> Self {
        Self {
            names: (self.names.1.clone(), self.names.0.clone()),
            scores: self.scores.iter().map(|(id, a, b)| (id.clone(), *b, *a)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Alternative: `b` scores higher than `a`.
    OneSidedBGreater,
    TwoSided,
}

/// Signed-rank summary of `b − a`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRank {
    /// Nonzero differences.
    pub n: usize,
    pub zeros: usize,
    /// Sum of (average) ranks of positive differences.
    pub w_plus: f64,
    /// `Σ (t³ − t)` over groups of tied magnitudes.
    pub tie_term: f64,
}

impl SignedRank {
    pub fn uses_exact(&self) -> bool {
        self.n <= EXACT_MAX_N && self.zeros == 0
    }
}

/// Largest sample using the exact null distribution.
pub const EXACT_MAX_N: usize = 25;

/// Table values are printed to 3 decimals; differences are snapped to a
/// fine grid so that floating-point noise neither breaks ties nor hides
/// zeros.
fn snap(d: f64) -> f64 {
    (d * 1e9).round() / 1e9
}

pub fn signed_rank(pairs: &PairedResults) -> Result<SignedRank> {
    let all: Vec<f64> = pairs.scores.iter().map(|(_, a, b)| snap(b - a)).collect();
    let zeros = all.iter().filter(|d| **d == 0.0).count();
    let mut d: Vec<f64> = all.into_iter().filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return Err(Error::DegenerateTest);
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let n = d.len();
    let mut w_plus = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && d[j].abs() == d[i].abs() {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        w_plus += rank * d[i..j].iter().filter(|v| **v > 0.0).count() as f64;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    Ok(SignedRank {
        n,
        zeros,
        w_plus,
        tie_term,
    })
}

/// Number of subsets of `{1..n}` with each possible sum.
fn subset_sum_counts(n: usize) -> Vec<u64> {
    let max = n * (n + 1) / 2;
    let mut c = vec![0u64; max + 1];
    c[0] = 1;
    for r in 1..=n {
        for s in (r..=max).rev() {
            c[s] += c[s - r];
        }
    }
    c
}

/// `P(T ≥ w)` where `T` is the signed-rank statistic of `n` untied ranks
/// under the null.
pub fn exact_upper_tail(n: usize, w: f64) -> f64 {
    let c = subset_sum_counts(n);
    let hits: u64 = c.iter().enumerate().filter(|(s, _)| *s as f64 >= w - 1e-9).map(|(_, k)| k).sum();
    hits as f64 / 2f64.powi(n as i32)
}

fn exact_lower_tail(n: usize, w: f64) -> f64 {
    let c = subset_sum_counts(n);
    let hits: u64 = c.iter().enumerate().filter(|(s, _)| *s as f64 <= w + 1e-9).map(|(_, k)| k).sum();
    hits as f64 / 2f64.powi(n as i32)
}

fn normal_tails(s: &SignedRank) -> Result<(f64, f64)> {
    let n = s.n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - s.tie_term / 48.0;
    if var <= 0.0 {
        return Err(Error::DegenerateTest);
    }
    let z = (s.w_plus - mean) / var.sqrt();
    let std = Normal::standard();
    Ok((std.sf(z), std.cdf(z)))
}

/// Wilcoxon signed-rank p-value for `b − a`.
///
/// Exact null distribution for up to 25 nonzero differences when no
/// difference was exactly zero; otherwise the normal approximation with
/// tie correction and no continuity correction.
pub fn wilcoxon(pairs: &PairedResults, side: Side) -> Result<f64> {
    let s = signed_rank(pairs)?;
    let (upper, lower) = if s.uses_exact() {
        (exact_upper_tail(s.n, s.w_plus), exact_lower_tail(s.n, s.w_plus))
    } else {
        normal_tails(&s)?
    };
    Ok(match side {
        Side::OneSidedBGreater => upper,
        Side::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    })
}

/// Reads `dataset,score_a,score_b` rows; a header row, if present, names
/// the two methods.
pub fn read_pairs_csv(path: impl AsRef<Path>) -> Result<PairedResults> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs_csv(&text)
}

pub fn parse_pairs_csv(text: &str) -> Result<PairedResults> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut names = ("a".to_string(), "b".to_string());
    let mut scores = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::FormatError(e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::RaggedData {
                line: line + 1,
                expected: 3,
                found: rec.len(),
            });
        }
        let parsed = (rec[1].parse::<f64>(), rec[2].parse::<f64>());
        match parsed {
            (Ok(a), Ok(b)) => scores.push((rec[0].to_string(), a, b)),
            _ if line == 0 => names = (rec[1].to_string(), rec[2].to_string()),
            (Err(_), _) => return Err(Error::ParseError { line: line + 1, col: 2, field: rec[1].to_string() }),
            (_, Err(_)) => return Err(Error::ParseError { line: line + 1, col: 3, field: rec[2].to_string() }),
        }
    }
    PairedResults::new(names, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn all_positive_five() {
        let p = PairedResults::from_columns(&[0.1, 0.2, 0.3, 0.4, 0.5], &[0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        assert!((wilcoxon(&p, Side::OneSidedBGreater).unwrap() - 1.0 / 32.0).abs() < 1e-15);
        assert!((wilcoxon(&p, Side::TwoSided).unwrap() - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let p = PairedResults::from_columns(&[0.5, 0.7], &[0.5, 0.7]).unwrap();
        assert!(matches!(wilcoxon(&p, Side::TwoSided), Err(Error::DegenerateTest)));
    }

    #[test]
    fn average_ranks_for_ties() {
        let p = PairedResults::from_columns(&[0.5, 0.5, 0.5], &[0.6, 0.4, 0.7]).unwrap();
        let s = signed_rank(&p).unwrap();
        assert_eq!(s.w_plus, 1.5 + 3.0);
        assert_eq!(s.tie_term, 6.0);
    }

    #[test]
    fn subset_counts_total() {
        let c = subset_sum_counts(10);
        assert_eq!(c.iter().sum::<u64>(), 1024);
        assert_eq!(c.len(), 56);
        assert_eq!(c[55], 1);
    }

    fn random_pairs(n: usize, seed: u64) -> PairedResults {
        let mut r = rng::stream(seed);
        // Distinct magnitudes keep the sample tie-free.
        let mut mags: Vec<f64> = (1..=n).map(|i| i as f64 * 0.01).collect();
        crate::dataset::shuffle(&mut mags, &mut r);
        let b: Vec<f64> = mags
            .iter()
            .map(|m| if r.random_bool(0.6) { 0.5 + m / 2.0 } else { 0.5 - m / 2.0 })
            .collect();
        PairedResults::from_columns(&vec![0.5; n], &b).unwrap()
    }

    #[test]
    fn exact_close_to_normal_at_twenty() {
        for seed in 0..50 {
            let p = random_pairs(20, seed);
            let s = signed_rank(&p).unwrap();
            assert!(s.uses_exact());
            let exact = exact_upper_tail(20, s.w_plus);
            let (approx, _) = normal_tails(&s).unwrap();
            assert!((exact - approx).abs() <= 0.02, "seed {seed}: {exact} vs {approx}");
        }
    }

    #[test]
    fn swapping_columns_complements_the_tail() {
        for seed in 0..30 {
            let p = random_pairs(12, seed);
            let w = signed_rank(&p).unwrap().w_plus;
            let pmf = subset_sum_counts(12)[w as usize] as f64 / 4096.0;
            let a = wilcoxon(&p, Side::OneSidedBGreater).unwrap();
            let b = wilcoxon(&p.swapped(), Side::OneSidedBGreater).unwrap();
            assert!((b - (1.0 - a + pmf)).abs() < 1e-12);
        }
    }

    #[test]
    fn p_values_lie_in_unit_interval() {
        for seed in 0..20 {
            let p = random_pairs(30, seed);
            for side in [Side::OneSidedBGreater, Side::TwoSided] {
                let v = wilcoxon(&p, side).unwrap();
                assert!(v > 0.0 && v <= 1.0);
            }
        }
    }

    #[test]
    fn csv_with_header() {
        let p = parse_pairs_csv("dataset,1nn,lb\nx,0.5,0.6\ny, 0.2 ,0.1\n").unwrap();
        assert_eq!(p.names, ("1nn".to_string(), "lb".to_string()));
        assert_eq!(p.scores.len(), 2);
        assert_eq!(p.scores[1], ("y".to_string(), 0.2, 0.1));
        assert!(parse_pairs_csv("x,0.5\n").is_err());
        assert!(parse_pairs_csv("x,0.5,0.6\ny,abc,0.2\n").is_err());
        assert!(parse_pairs_csv("x,0.5,1.6\n").is_err());
    }
}
