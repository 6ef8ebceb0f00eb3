//! Triplet accumulation and CSR matrices with a frozen pattern.
//!
//! [`triplets_to_csr`] sorts once and returns a [`ScatterMap`] that sends
//! every original triplet to its CSR slot; later [`CsrMatrix::refill`] calls
//! only add values through the map.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct TripletBuffer {
    pub n_rows: usize,
    pub n_cols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl TripletBuffer {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        TripletBuffer {
            n_rows,
            n_cols,
            ..Default::default()
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        TripletBuffer {
            n_rows,
            n_cols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    /// Panics if the index is outside the shape.
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        assert!(
            row < self.n_rows && col < self.n_cols,
            "triplet ({row}, {col}) outside {}x{}",
            self.n_rows,
            self.n_cols
        );
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }
}

/// Destination slot in the CSR value array for every local value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScatterMap {
    pub slots: Vec<usize>,
}

impl ScatterMap {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Sums duplicates and records where each triplet landed.
pub fn triplets_to_csr(t: &TripletBuffer) -> (CsrMatrix, ScatterMap) {
    let (csr, map) = pattern_from_pairs(t.n_rows, t.n_cols, &t.rows, &t.cols);
    let mut csr = csr;
    csr.add_scattered(&map, &t.vals, 1.0);
    (csr, map)
}

/// Pattern (zero values) for the given index pairs plus their scatter map.
pub fn pattern_from_pairs(
    n_rows: usize,
    n_cols: usize,
    rows: &[usize],
    cols: &[usize],
) -> (CsrMatrix, ScatterMap) {
    assert_eq!(rows.len(), cols.len());
    let nt = rows.len();
    // bucket triplet ids by row
    let mut start = vec![0usize; n_rows + 1];
    for &r in rows {
        start[r + 1] += 1;
    }
    for i in 0..n_rows {
        start[i + 1] += start[i];
    }
    let mut next = start.clone();
    let mut by_row = vec![0usize; nt];
    for (k, &r) in rows.iter().enumerate() {
        by_row[next[r]] = k;
        next[r] += 1;
    }

    let mut row_ptr = Vec::with_capacity(n_rows + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    let mut slots = vec![0usize; nt];
    for r in 0..n_rows {
        let bucket = &mut by_row[start[r]..start[r + 1]];
        bucket.sort_by_key(|&k| cols[k]);
        let mut last = usize::MAX;
        for &k in bucket.iter() {
            let c = cols[k];
            if c != last {
                col_idx.push(c);
                last = c;
            }
            slots[k] = col_idx.len() - 1;
        }
        row_ptr.push(col_idx.len());
    }
    let nnz = col_idx.len();
    (
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            vals: vec![0.0; nnz],
        },
        ScatterMap { slots },
    )
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = TripletBuffer::new(a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    t.push(i, j, a[(i, j)]);
                }
            }
        }
        triplets_to_csr(&t).0
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Same pattern, all values zero.
    pub fn zeros_like(&self) -> Self {
        CsrMatrix {
            vals: vec![0.0; self.nnz()],
            ..self.clone()
        }
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.vals[r])
    }

    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (cols, _) = self.row(i);
        cols.binary_search(&j).ok().map(|p| self.row_ptr[i] + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.vals[s])
    }

    /// Zeroes the values, then accumulates `local` through `map`.
    pub fn refill(&mut self, map: &ScatterMap, local: &[f64]) -> Result<()> {
        if local.len() != map.len() {
            return Err(Error::DimensionMismatch(format!(
                "refill with {} values through a map of length {}",
                local.len(),
                map.len()
            )));
        }
        self.vals.fill(0.0);
        self.add_scattered(map, local, 1.0);
        Ok(())
    }

    /// `vals[map[k]] += scale * local[k]` in index order.
    pub fn add_scattered(&mut self, map: &ScatterMap, local: &[f64], scale: f64) {
        assert_eq!(local.len(), map.len());
        if scale == 1.0 {
            for (&s, &v) in map.slots.iter().zip(local) {
                self.vals[s] += v;
            }
        } else {
            for (&s, &v) in map.slots.iter().zip(local) {
                self.vals[s] += scale * v;
            }
        }
    }

    /// `self += alpha * other`, both on the same pattern.
    pub fn axpy(&mut self, alpha: f64, other: &CsrMatrix) -> Result<()> {
        if !self.same_pattern(other) {
            return Err(Error::DimensionMismatch("axpy on different patterns".into()));
        }
        for (a, &b) in self.vals.iter_mut().zip(&other.vals) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.vals.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Replaces row `i` by the identity row (the diagonal must be in the pattern).
    pub fn set_identity_row(&mut self, i: usize) {
        let diag = self.slot(i, i).expect("diagonal entry missing from pattern");
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.vals[r].fill(0.0);
        self.vals[diag] = 1.0;
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "matvec with {} columns and a vector of length {}",
                self.n_cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.col_idx[r.clone()]
                .iter()
                .zip(&self.vals[r])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = TripletBuffer::with_capacity(self.n_cols, self.n_rows, self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                t.push(j, i, v);
            }
        }
        triplets_to_csr(&t).0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F` for arbitrary patterns of equal shape.
    pub fn diff_frobenius(&self, other: &CsrMatrix) -> f64 {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut acc = 0.0;
        for i in 0..self.n_rows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let d = match (ca.get(p), cb.get(q)) {
                    (Some(&a), Some(&b)) if a == b => {
                        p += 1;
                        q += 1;
                        va[p - 1] - vb[q - 1]
                    }
                    (Some(&a), Some(&b)) if a < b => {
                        p += 1;
                        va[p - 1]
                    }
                    (Some(_), None) => {
                        p += 1;
                        va[p - 1]
                    }
                    _ => {
                        q += 1;
                        -vb[q - 1]
                    }
                };
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// `‖self − other‖_F / ‖other‖_F` (absolute when `other` is zero).
    pub fn rel_diff(&self, other: &CsrMatrix) -> f64 {
        let d = self.diff_frobenius(other);
        let n = other.frobenius_norm();
        if n > 0.0 {
            d / n
        } else {
            d
        }
    }

    pub fn asymmetry(&self) -> f64 {
        self.diff_frobenius(&self.transpose())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                a[(i, j)] += v;
            }
        }
        a
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.vals.iter().sum()
    }

    /// Checks the CSR structural invariants.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.row_ptr.len() != self.n_rows + 1 || self.row_ptr[0] != 0 {
            return Err("row_ptr has the wrong length or does not start at 0".into());
        }
        if *self.row_ptr.last().unwrap() != self.nnz() || self.vals.len() != self.nnz() {
            return Err("row_ptr does not end at nnz".into());
        }
        for i in 0..self.n_rows {
            if self.row_ptr[i] > self.row_ptr[i + 1] {
                return Err(format!("row_ptr decreases at row {i}"));
            }
            let (cols, _) = self.row(i);
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("columns of row {i} are not strictly increasing"));
            }
            if cols.iter().any(|&j| j >= self.n_cols) {
                return Err(format!("column index out of range in row {i}"));
            }
        }
        Ok(())
    }

    /// MatrixMarket `coordinate real general` export.
    pub fn write_matrix_market(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Anything that can compute `y = A x` for a square `A`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n_rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y)
    }
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}
