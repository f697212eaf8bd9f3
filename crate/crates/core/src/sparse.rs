//! Coordinate-format sparse matrices and their on-disk text format.
//!
//! Entries are kept sorted row-major with unique coordinates, so products
//! and file round-trips are deterministic. The text format is one header
//! line `rows cols nnz` followed by one `row col value` triple per line
//! (0-based indices, UTF-8, LF line endings).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-sum tolerance for barycentric upsampling matrices.
pub const UPSAMPLING_ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("sparse matrix extents must be positive, got {rows}x{cols}")));
        }
        for &(r, c, v) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Data(format!(
                    "entry ({r}, {c}) out of range for {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite entry at ({r}, {c})")));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::Data(format!(
                    "duplicate coordinate ({}, {})",
                    pair[0].0, pair[0].1
                )));
            }
        }
        Ok(SparseMatrix { rows, cols, entries })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(r, c), |&(er, ec, _)| (er, ec))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    /// Plain (non-recorded) sparse-dense product with an [n, d] tensor.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[0] != self.cols {
            return Err(Error::Shape(format!(
                "sparse apply: {}x{} times {:?}",
                self.rows,
                self.cols,
                x.shape()
            )));
        }
        let d = x.shape()[1];
        let mut out = vec![0.0; self.rows * d];
        for &(r, c, v) in &self.entries {
            let src = &x.values()[c * d..(c + 1) * d];
            let dst = &mut out[r * d..(r + 1) * d];
            for j in 0..d {
                dst[j] += v * src[j];
            }
        }
        Tensor::new(vec![self.rows, d], out)
    }

    /// Sparse-sparse product; used to compose multi-level upsampling maps.
    pub fn multiply(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "sparse multiply: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut acc: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        for &(r, k, v) in &self.entries {
            let start = other
                .entries
                .partition_point(|&(er, _, _)| er < k);
            for &(er, c, w) in other.entries[start..].iter().take_while(|&&(er, _, _)| er == k) {
                debug_assert_eq!(er, k);
                *acc.entry((r, c)).or_insert(0.0) += v * w;
            }
        }
        let entries = acc.into_iter().map(|((r, c), v)| (r, c, v)).collect();
        SparseMatrix::new(self.rows, other.cols, entries)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let entries = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        SparseMatrix::new(self.cols, self.rows, entries).expect("transpose preserves validity")
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(vec![self.rows, self.cols]);
        for &(r, c, v) in &self.entries {
            out.values_mut()[r * self.cols + c] = v;
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.rows];
        for &(r, _, v) in &self.entries {
            sums[r] += v;
        }
        sums
    }

    /// Enforce the barycentric invariant of an upsampling matrix: every row
    /// sums to 1 within [`UPSAMPLING_ROW_SUM_TOL`].
    pub fn validate_upsampling(&self) -> Result<()> {
        for (r, s) in self.row_sums().iter().enumerate() {
            if (s - 1.0).abs() > UPSAMPLING_ROW_SUM_TOL {
                return Err(Error::Data(format!(
                    "upsampling row {r} sums to {s}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.rows, self.cols, self.nnz());
        for &(r, c, v) in &self.entries {
            let _ = writeln!(out, "{r} {c} {v}");
        }
        out
    }

    pub fn from_coordinate_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty matrix file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::Data(format!("bad header token '{t}'"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(Error::Data(format!("header must be 'rows cols nnz', got '{header}'")));
        }
        let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
        let mut entries = Vec::with_capacity(nnz);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(Error::Data(format!("line {}: expected 'row col value', got '{line}'", i + 2)));
            }
            let r: usize = toks[0].parse().map_err(|_| Error::Data(format!("line {}: bad row '{}'", i + 2, toks[0])))?;
            let c: usize = toks[1].parse().map_err(|_| Error::Data(format!("line {}: bad col '{}'", i + 2, toks[1])))?;
            let v: f64 = toks[2].parse().map_err(|_| Error::Data(format!("line {}: bad value '{}'", i + 2, toks[2])))?;
            entries.push((r, c, v));
        }
        if entries.len() != nnz {
            return Err(Error::Data(format!(
                "header declares {nnz} entries, file has {}",
                entries.len()
            )));
        }
        SparseMatrix::new(rows, cols, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_coordinate_text())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// What a matrix file is expected to contain; upsampling matrices get the
/// barycentric row-sum check on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Upsampling,
    General,
}

/// Load a coordinate-format sparse matrix, optionally pinning its shape.
pub fn load_matrix(path: &Path, expected_shape: Option<(usize, usize)>, kind: MatrixKind) -> Result<SparseMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let m = SparseMatrix::from_coordinate_text(&text)?;
    if let Some((rows, cols)) = expected_shape {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::Data(format!(
                "{}: expected {rows}x{cols}, found {}x{}",
                path.display(),
                m.rows(),
                m.cols()
            )));
        }
    }
    if kind == MatrixKind::Upsampling {
        m.validate_upsampling()?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_coordinates_rejected() {
        let err = SparseMatrix::new(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0)]);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(SparseMatrix::new(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn apply_identity_is_noop() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let y = SparseMatrix::identity(2).apply(&x).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn apply_half_half_row() {
        let s = SparseMatrix::new(1, 2, vec![(0, 0, 0.5), (0, 1, 0.5)]).unwrap();
        let x = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![2.0, 4.0, 6.0]]).unwrap();
        let y = s.apply(&x).unwrap();
        assert_eq!(y.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn coordinate_text_round_trip_is_exact() {
        let s = SparseMatrix::new(
            3,
            4,
            vec![(0, 0, 0.1), (1, 2, -7.25), (2, 3, 1.0 / 3.0)],
        )
        .unwrap();
        let back = SparseMatrix::from_coordinate_text(&s.to_coordinate_text()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn multiply_matches_dense() {
        let a = SparseMatrix::new(2, 3, vec![(0, 0, 2.0), (0, 2, 1.0), (1, 1, -1.0)]).unwrap();
        let b = SparseMatrix::new(3, 2, vec![(0, 1, 3.0), (1, 0, 4.0), (2, 1, 5.0)]).unwrap();
        let c = a.multiply(&b).unwrap();
        let dense = |m: &SparseMatrix| m.to_dense();
        let (da, db, dc) = (dense(&a), dense(&b), dense(&c));
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += da.at2(i, k) * db.at2(k, j);
                }
                assert!((acc - dc.at2(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn upsampling_row_sum_enforced() {
        let bad = SparseMatrix::new(2, 2, vec![(0, 0, 1.0), (1, 0, 0.5), (1, 1, 0.4)]).unwrap();
        let err = bad.validate_upsampling().unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }
}
