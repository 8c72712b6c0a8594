//! Dense tensors and the dense/sparse kernels the rest of the engine runs on.
//!
//! All arithmetic is `f32` with a fixed summation order: parallel kernels
//! split work across output rows only, so results are bit-identical across
//! thread counts.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major `f32` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::DimensionMismatch(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Gathers the rows listed in `index` into a new matrix.
    pub fn select_rows(&self, index: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(self.row(i));
        }
        Tensor { shape: vec![index.len(), c], data }
    }
}

/// Dense matrix product `a · b`, summing over `k` in ascending order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.dims2()?;
    let (k2, m) = b.dims2()?;
    if k != k2 {
        return Err(Error::DimensionMismatch(format!("matmul {n}x{k} by {k2}x{m}")));
    }
    let mut out = vec![0.0f32; n * m];
    if m > 0 {
        out.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            let a_row = &a.data[i * k..(i + 1) * k];
            for (kk, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b_row = &b.data[kk * m..(kk + 1) * m];
                for (o, &bv) in row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        });
    }
    Tensor::new(vec![n, m], out)
}

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f32>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix { rows, cols, row_ptr: vec![0; rows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets in any order.
    /// Duplicate positions are rejected.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f32)>) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= rows || c >= cols {
                return Err(Error::DimensionMismatch(format!("entry ({r}, {c}) outside {rows}x{cols}")));
            }
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = triplets.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(Error::InvalidArgument(format!("duplicate sparse entry ({}, {})", w[0].0, w[0].1)));
        }
        Ok(Self::from_sorted_unique(rows, cols, &triplets))
    }

    /// Like [`SparseMatrix::from_triplets`] but sums duplicate positions.
    pub fn from_triplets_summed(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f32)>) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= rows || c >= cols {
                return Err(Error::DimensionMismatch(format!("entry ({r}, {c}) outside {rows}x{cols}")));
            }
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f32)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        Ok(Self::from_sorted_unique(rows, cols, &merged))
    }

    fn from_sorted_unique(rows: usize, cols: usize, triplets: &[(usize, usize, f32)]) -> Self {
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in triplets {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx: triplets.iter().map(|t| t.1).collect(),
            values: triplets.iter().map(|t| t.2).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f32]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f32> {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).ok().map(|k| vals[k])
    }

    /// Entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(vec![self.rows, self.cols]);
        for (r, c, v) in self.triplets() {
            t.data[r * self.cols + c] = v;
        }
        t
    }

    pub fn from_dense(t: &Tensor) -> Result<Self> {
        let (r, c) = t.dims2()?;
        let trip = (0..r)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = t.data[i * c + j];
                (v != 0.0).then_some((i, j, v))
            })
            .collect();
        SparseMatrix::from_triplets(r, c, trip)
    }

    /// Returns a copy with every value in row `i` scaled by `factor(i)`.
    pub fn scale_rows(&self, factor: impl Fn(usize) -> f32) -> SparseMatrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            let f = factor(i);
            for v in &mut out.values[self.row_ptr[i]..self.row_ptr[i + 1]] {
                *v *= f;
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let trip = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, trip).expect("transpose keeps entries unique")
    }
}

/// `s · x` for a sparse `s` and dense `x`; each output row sums its
/// contributions in ascending column order.
pub fn spmm(s: &SparseMatrix, x: &Tensor) -> Result<Tensor> {
    let (n, c) = x.dims2()?;
    if s.cols != n {
        return Err(Error::DimensionMismatch(format!("spmm {}x{} by {}x{}", s.rows, s.cols, n, c)));
    }
    let mut out = vec![0.0f32; s.rows * c];
    if c > 0 {
        out.par_chunks_mut(c).enumerate().for_each(|(i, row)| {
            let (cols, vals) = s.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let xr = &x.data[j * c..(j + 1) * c];
                for (o, &xv) in row.iter_mut().zip(xr) {
                    *o += v * xv;
                }
            }
        });
    }
    Tensor::new(vec![s.rows, c], out)
}

/// Sparse product `a · b` with duplicate contributions summed.
pub fn sparse_compose(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "compose {}x{} with {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let rows: Vec<Vec<(usize, f32)>> = (0..a.rows)
        .into_par_iter()
        .map(|i| {
            let mut acc: Vec<(usize, f32)> = Vec::new();
            let (acols, avals) = a.row(i);
            for (&k, &av) in acols.iter().zip(avals) {
                let (bcols, bvals) = b.row(k);
                for (&j, &bv) in bcols.iter().zip(bvals) {
                    acc.push((j, av * bv));
                }
            }
            acc.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f32)> = Vec::with_capacity(acc.len());
            for (j, v) in acc {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            merged
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(a.rows + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for r in rows {
        for (j, v) in r {
            col_idx.push(j);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    Ok(SparseMatrix { rows: a.rows, cols: b.cols, row_ptr, col_idx, values })
}
