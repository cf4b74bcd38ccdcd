//! Count-valued sparse matrices in compressed sparse row form.
//!
//! Entries are nonnegative integer counts, so a product of relation
//! adjacency matrices counts the walks between two entities rather than
//! merely recording that one exists.

use crate::error::{Error, Result};

/// Default saturation value for products: `2^31 - 1`.
pub const DEFAULT_SATURATION: u64 = i32::MAX as u64;

/// A `rows x cols` matrix of nonnegative counts. Zero entries are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<u64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
            values: vec![1; n],
        }
    }

    /// Builds a matrix from coordinate entries. Duplicate coordinates are
    /// summed and zero values dropped.
    ///
    /// Panics if a coordinate lies outside the matrix.
    pub fn from_entries<I>(rows: usize, cols: usize, entries: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, u64)>,
    {
        let mut coo: Vec<(usize, usize, u64)> = entries.into_iter().filter(|e| e.2 != 0).collect();
        for &(i, j, _) in &coo {
            assert!(i < rows && j < cols, "entry ({i}, {j}) outside {rows}x{cols} matrix");
        }
        coo.sort_unstable_by_key(|&(i, j, _)| (i, j));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices: Vec<u32> = Vec::with_capacity(coo.len());
        let mut values: Vec<u64> = Vec::with_capacity(coo.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in coo {
            if last == Some((i, j)) {
                let slot = values.last_mut().expect("previous entry");
                *slot = slot.saturating_add(v);
                continue;
            }
            indptr[i + 1] += 1;
            indices.push(j as u32);
            values.push(v);
            last = Some((i, j));
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Self { rows, cols, indptr, indices, values }
    }

    pub fn from_dense(dense: &[Vec<u64>]) -> Self {
        let rows = dense.len();
        let cols = dense.first().map_or(0, Vec::len);
        let entries = dense
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &v)| (i, j, v)));
        Self::from_entries(rows, cols, entries)
    }

    pub fn to_dense(&self) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0u64; self.cols]; self.rows];
        for (i, j, v) in self.iter() {
            out[i][j] = v;
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        if row >= self.rows {
            return 0;
        }
        let span = self.indptr[row]..self.indptr[row + 1];
        match self.indices[span.clone()].binary_search(&(col as u32)) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0,
        }
    }

    /// Nonzero `(col, value)` pairs of one row in increasing column order.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let span = if row < self.rows {
            self.indptr[row]..self.indptr[row + 1]
        } else {
            0..0
        };
        self.indices[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&j, &v)| (j as usize, v))
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        if row < self.rows {
            self.indptr[row + 1] - self.indptr[row]
        } else {
            0
        }
    }

    /// All nonzero entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn max_value(&self) -> u64 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.indices {
            counts[j as usize + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0u64; self.nnz()];
        // Rows are visited in order, so each output row comes out sorted.
        for i in 0..self.rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[k] as usize;
                let slot = next[j];
                indices[slot] = i as u32;
                values[slot] = self.values[k];
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }

    /// Matrix product with counts saturating at [`DEFAULT_SATURATION`].
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.mul_saturating(other, DEFAULT_SATURATION).map(|(m, _)| m)
    }

    /// Matrix product whose entries are clamped to `cap`. The flag reports
    /// whether any entry was clamped.
    pub fn mul_saturating(&self, other: &Self, cap: u64) -> Result<(Self, bool)> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "mul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let n = other.cols;
        let mut acc = vec![0u64; n];
        let mut touched = vec![false; n];
        let mut cols_in_row: Vec<u32> = Vec::new();

        let mut indptr = Vec::with_capacity(self.rows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut saturated = false;

        for i in 0..self.rows {
            for (j, a) in self.row(i) {
                for (k, b) in other.row(j) {
                    if !touched[k] {
                        touched[k] = true;
                        cols_in_row.push(k as u32);
                    }
                    let term = a.saturating_mul(b);
                    acc[k] = acc[k].saturating_add(term);
                }
            }
            cols_in_row.sort_unstable();
            for &k in &cols_in_row {
                let k = k as usize;
                let mut v = acc[k];
                if v > cap {
                    v = cap;
                    saturated = true;
                }
                if v != 0 {
                    indices.push(k as u32);
                    values.push(v);
                }
                acc[k] = 0;
                touched[k] = false;
            }
            cols_in_row.clear();
            indptr.push(indices.len());
        }
        Ok((
            Self {
                rows: self.rows,
                cols: n,
                indptr,
                indices,
                values,
            },
            saturated,
        ))
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "hadamard",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.rows {
            let mut a = self.row(i).peekable();
            let mut b = other.row(i).peekable();
            while let (Some(&(ja, va)), Some(&(jb, vb))) = (a.peek(), b.peek()) {
                match ja.cmp(&jb) {
                    std::cmp::Ordering::Less => {
                        a.next();
                    }
                    std::cmp::Ordering::Greater => {
                        b.next();
                    }
                    std::cmp::Ordering::Equal => {
                        indices.push(ja as u32);
                        values.push(va.saturating_mul(vb));
                        a.next();
                        b.next();
                    }
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Vec<Vec<u64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| u64::from(rng.gen_bool(p))).collect())
            .collect()
    }

    fn dense_mul(a: &[Vec<u64>], b: &[Vec<u64>]) -> Vec<Vec<u64>> {
        let (n, m, p) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0u64; p]; n];
        for i in 0..n {
            for j in 0..m {
                for k in 0..p {
                    out[i][k] += a[i][j] * b[j][k];
                }
            }
        }
        out
    }

    #[test]
    fn two_path_count() {
        // a=0, b=1, c=2 with p = {(a,b), (b,c)}
        let p = SparseMatrix::from_entries(3, 3, [(0, 1, 1), (1, 2, 1)]);
        let pp = p.mul(&p).unwrap();
        assert_eq!(pp.iter().collect::<Vec<_>>(), vec![(0, 2, 1)]);
    }

    #[test]
    fn identity_is_neutral() {
        let m = SparseMatrix::from_entries(4, 4, [(0, 3, 2), (2, 1, 1), (3, 3, 5)]);
        assert_eq!(SparseMatrix::identity(4).mul(&m).unwrap(), m);
        assert_eq!(m.mul(&SparseMatrix::identity(4)).unwrap(), m);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = SparseMatrix::zeros(2, 3);
        let b = SparseMatrix::zeros(2, 3);
        assert!(matches!(a.mul(&b), Err(Error::DimensionMismatch { .. })));
        assert!(a.hadamard(&SparseMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn transpose_single_entry() {
        let m = SparseMatrix::from_entries(2, 2, [(0, 1, 1)]);
        assert_eq!(m.transpose().iter().collect::<Vec<_>>(), vec![(1, 0, 1)]);
    }

    #[test]
    fn hadamard_examples() {
        let a = SparseMatrix::from_entries(3, 3, [(0, 2, 2)]);
        let b = SparseMatrix::from_entries(3, 3, [(0, 2, 1)]);
        assert_eq!(a.hadamard(&b).unwrap().iter().collect::<Vec<_>>(), vec![(0, 2, 2)]);
        assert!(a.hadamard(&SparseMatrix::zeros(3, 3)).unwrap().is_zero());
    }

    #[test]
    fn duplicate_entries_are_summed_and_zeros_dropped() {
        let m = SparseMatrix::from_entries(2, 2, [(1, 1, 1), (1, 1, 2), (0, 0, 0)]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(1, 1), 3);
        assert_eq!(m.get(0, 0), 0);
    }

    #[test]
    fn saturation_clamps_and_reports() {
        let a = SparseMatrix::from_entries(1, 3, [(0, 0, 1), (0, 1, 1), (0, 2, 1)]);
        let b = SparseMatrix::from_entries(3, 1, [(0, 0, 1), (1, 0, 1), (2, 0, 1)]);
        let (m, sat) = a.mul_saturating(&b, 2).unwrap();
        assert!(sat);
        assert_eq!(m.get(0, 0), 2);
        let (m, sat) = a.mul_saturating(&b, 3).unwrap();
        assert!(!sat);
        assert_eq!(m.get(0, 0), 3);
    }

    #[test]
    fn products_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..200 {
            let n = 1 + trial % 20;
            let a = random_dense(&mut rng, n, n, 0.3);
            let b = random_dense(&mut rng, n, n, 0.3);
            let got = SparseMatrix::from_dense(&a).mul(&SparseMatrix::from_dense(&b)).unwrap();
            assert_eq!(got.to_dense(), dense_mul(&a, &b));
        }
    }

    #[test]
    fn rectangular_product_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_dense(&mut rng, 10, 7, 0.4);
        let b = random_dense(&mut rng, 7, 13, 0.4);
        let got = SparseMatrix::from_dense(&a).mul(&SparseMatrix::from_dense(&b)).unwrap();
        assert_eq!(got.to_dense(), dense_mul(&a, &b));
    }

    #[test]
    fn transpose_and_hadamard_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_dense(&mut rng, 15, 15, 0.25);
            let b = random_dense(&mut rng, 15, 15, 0.25);
            let sa = SparseMatrix::from_dense(&a);
            let t = sa.transpose().to_dense();
            for i in 0..15 {
                for j in 0..15 {
                    assert_eq!(t[i][j], a[j][i]);
                }
            }
            assert_eq!(sa.transpose().transpose(), sa);
            let h = sa.hadamard(&SparseMatrix::from_dense(&b)).unwrap().to_dense();
            for i in 0..15 {
                for j in 0..15 {
                    assert_eq!(h[i][j], a[i][j] * b[i][j]);
                }
            }
        }
    }

    #[test]
    fn no_stored_zeros_after_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = SparseMatrix::from_dense(&random_dense(&mut rng, 12, 12, 0.2));
        let b = SparseMatrix::from_dense(&random_dense(&mut rng, 12, 12, 0.2));
        for m in [a.mul(&b).unwrap(), a.hadamard(&b).unwrap(), a.transpose()] {
            assert!(m.iter().all(|(_, _, v)| v > 0));
        }
    }
}
