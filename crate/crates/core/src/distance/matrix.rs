use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{dtw_unchecked, envelope, lb_keogh_unchecked, WarpBand};
use crate::dataset::{Dataset, TimeSeries};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LBDM";
const VERSION: u8 = 0x01;
/// magic + version + kind + band + n_rows + n_cols
pub const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Dtw,
    LbKeogh,
}

impl DistanceKind {
    fn to_byte(self) -> u8 {
        match self {
            DistanceKind::Dtw => 0,
            DistanceKind::LbKeogh => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(DistanceKind::Dtw),
            1 => Ok(DistanceKind::LbKeogh),
            other => Err(Error::FormatError(format!("unknown kind byte {other}"))),
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceKind::Dtw => "dtw",
            DistanceKind::LbKeogh => "lbkeogh",
        })
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dtw" => Ok(DistanceKind::Dtw),
            "lbkeogh" | "lb_keogh" | "lb-keogh" | "lb" => Ok(DistanceKind::LbKeogh),
            _ => Err(Error::InvalidArgument(format!("unknown distance kind {s:?}"))),
        }
    }
}

/// Dense row-major matrix of pairwise distances.
///
/// For `LbKeogh`, entry `(i, j)` is the bound with the envelope built on
/// instance `i` and deviations measured on instance `j`; it is not
/// symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    kind: DistanceKind,
    band: WarpBand,
}

impl DistanceMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>, kind: DistanceKind, band: WarpBand) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::ShapeError(format!(
                "{} values for a {n_rows}x{n_cols} matrix",
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDistance(bad));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
            kind,
            band,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn band(&self) -> WarpBand {
        self.band
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// The `m x m` block `D[idx[a], idx[b]]`, row-major.
    pub fn submatrix(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * idx.len());
        for &i in idx {
            let row = self.row(i);
            out.extend(idx.iter().map(|&j| row[j]));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.push(VERSION);
        buf.push(self.kind.to_byte());
        buf.extend_from_slice(&self.band.to_wire().to_le_bytes());
        buf.extend_from_slice(&(self.n_rows as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_cols as u32).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(Error::FormatError("bad magic".into()));
            }
            return Err(Error::TruncatedFile {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::FormatError("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::FormatError(format!("unsupported version {}", bytes[4])));
        }
        let kind = DistanceKind::from_byte(bytes[5])?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let band = WarpBand::from_wire(u32_at(6));
        let n_rows = u32_at(10) as usize;
        let n_cols = u32_at(14) as usize;
        let expected = HEADER_LEN + 8 * n_rows * n_cols;
        if bytes.len() < expected {
            return Err(Error::TruncatedFile {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::FormatError(format!(
                "{} trailing bytes",
                bytes.len() - expected
            )));
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(n_rows, n_cols, values, kind, band)
    }
}

pub fn save_matrix(m: &DistanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DistanceMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DistanceMatrix::from_bytes(&bytes)
}

pub fn pairwise(data: &Dataset, kind: DistanceKind, band: WarpBand, workers: usize) -> Result<DistanceMatrix> {
    pairwise_series(data.instances(), kind, band, workers)
}

/// All ordered pairs `(i, j)`, diagonal fixed at zero.
///
/// Rows are split into contiguous ranges, one per worker; each worker
/// builds the envelope of its row instance once and writes only its own
/// slice of the output, so the result does not depend on `workers`.
pub fn pairwise_series(series: &[TimeSeries], kind: DistanceKind, band: WarpBand, workers: usize) -> Result<DistanceMatrix> {
    let n = series.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let len = series[0].len();
    if let Some(bad) = series.iter().find(|s| s.len() != len) {
        return Err(Error::LengthMismatch {
            left: len,
            right: bad.len(),
        });
    }
    let radius = band.radius_for(len);
    let mut values = vec![0.0; n * n];
    let workers = workers.clamp(1, n);
    let rows_per = n.div_ceil(workers);

    let fill_row = |i: usize, out: &mut [f64]| {
        let x = series[i].values();
        match kind {
            DistanceKind::LbKeogh => {
                let env = envelope(x, radius);
                for (j, slot) in out.iter_mut().enumerate() {
                    if j != i {
                        *slot = lb_keogh_unchecked(&env, series[j].values());
                    }
                }
            }
            DistanceKind::Dtw => {
                for (j, slot) in out.iter_mut().enumerate() {
                    if j != i {
                        *slot = dtw_unchecked(x, series[j].values(), radius);
                    }
                }
            }
        }
    };

    if workers == 1 {
        for (i, row) in values.chunks_mut(n).enumerate() {
            fill_row(i, row);
        }
    } else {
        thread::scope(|s| {
            for (w, block) in values.chunks_mut(rows_per * n).enumerate() {
                let fill_row = &fill_row;
                s.spawn(move || {
                    for (r, row) in block.chunks_mut(n).enumerate() {
                        fill_row(w * rows_per + r, row);
                    }
                });
            }
        });
    }
    DistanceMatrix::new(n, n, values, kind, band)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_series(n: usize, len: usize, seed: u64) -> Vec<TimeSeries> {
        let mut rng = crate::rng::stream(seed);
        (0..n)
            .map(|_| TimeSeries::new((0..len).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn single_instance_matrix() {
        let s = random_series(1, 5, 0);
        for kind in [DistanceKind::Dtw, DistanceKind::LbKeogh] {
            let m = pairwise_series(&s, kind, WarpBand::Radius(1), 1).unwrap();
            assert_eq!(m.values(), &[0.0]);
        }
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let s = random_series(50, 32, 7);
        for kind in [DistanceKind::Dtw, DistanceKind::LbKeogh] {
            let a = pairwise_series(&s, kind, WarpBand::Radius(3), 1).unwrap();
            let b = pairwise_series(&s, kind, WarpBand::Radius(3), 8).unwrap();
            let c = pairwise_series(&s, kind, WarpBand::Radius(3), 3).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, c);
        }
    }

    #[test]
    fn lb_diagonal_zero_and_dtw_symmetric() {
        let s = random_series(12, 20, 3);
        let lb = pairwise_series(&s, DistanceKind::LbKeogh, WarpBand::Radius(2), 2).unwrap();
        let dtw = pairwise_series(&s, DistanceKind::Dtw, WarpBand::Radius(2), 2).unwrap();
        for i in 0..12 {
            assert_eq!(lb.get(i, i), 0.0);
            for j in 0..12 {
                assert!((dtw.get(i, j) - dtw.get(j, i)).abs() <= 1e-12 * dtw.get(i, j).max(1.0));
                assert!(lb.get(i, j) <= dtw.get(i, j) + 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = random_series(6, 9, 1);
        let m = pairwise_series(&s, DistanceKind::LbKeogh, WarpBand::Radius(1), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lbdm");
        save_matrix(&m, &p).unwrap();
        assert_eq!(load_matrix(&p).unwrap(), m);
        let u = DistanceMatrix::new(1, 1, vec![0.0], DistanceKind::Dtw, WarpBand::Unconstrained).unwrap();
        assert_eq!(DistanceMatrix::from_bytes(&u.to_bytes()).unwrap(), u);
    }

    #[test]
    fn two_by_two_file_size() {
        let m = DistanceMatrix::new(2, 2, vec![0.0, 1.5, 2.5, 0.0], DistanceKind::Dtw, WarpBand::Radius(4)).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 32);
        assert_eq!(&bytes[..6], b"LBDM\x01\x00");
        assert_eq!(&bytes[6..10], &4u32.to_le_bytes());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let m = DistanceMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0], DistanceKind::LbKeogh, WarpBand::Radius(1)).unwrap();
        let mut bytes = m.to_bytes();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(DistanceMatrix::from_bytes(&wrong), Err(Error::FormatError(_))));
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(DistanceMatrix::from_bytes(&wrong_version), Err(Error::FormatError(_))));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(DistanceMatrix::from_bytes(&bytes), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn submatrix_slices_in_index_order() {
        let m = DistanceMatrix::new(3, 3, (0..9).map(f64::from).collect(), DistanceKind::Dtw, WarpBand::Unconstrained).unwrap();
        assert_eq!(m.submatrix(&[2, 0]), vec![8.0, 6.0, 2.0, 0.0]);
    }
}
