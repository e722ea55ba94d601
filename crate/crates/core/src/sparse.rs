//! Compressed sparse row storage and a direct solver.
//!
//! Assembly accumulates triplets; duplicates are summed. Factorization is
//! delegated to faer's sparse LU with partial pivoting.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};
use crate::io::format_f64;

#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.n && col < self.n);
        if val != 0.0 {
            self.entries.push((row, col, val));
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

/// Square sparse matrix in CSR layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n: usize) -> Self {
        TripletBuilder::new(n).build()
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut b = TripletBuilder::new(d.len());
        for (k, &v) in d.iter().enumerate() {
            b.add(k, k, v);
        }
        b.build()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// `out = self · x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *o = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.n);
        for (r, c, v) in self.triplets() {
            b.add(c, r, v);
        }
        b.build()
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut t = TripletBuilder::new(self.n);
        for (r, c, v) in self.triplets() {
            t.add(r, c, a * v);
        }
        for (r, c, v) in other.triplets() {
            t.add(r, c, b * v);
        }
        t.build()
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> CsrMatrix {
        self.combine(1.0, &CsrMatrix::diagonal(d), 1.0)
    }

    pub fn scale_rows(&self, s: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for (r, sr) in s.iter().enumerate().take(self.n) {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.vals[k] *= sr;
            }
        }
        out
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }

    /// Writes `row,col,value` lines with a header.
    pub fn write_triplets_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,col,value")?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r},{c},{}", format_f64(v))?;
        }
        Ok(())
    }

    pub fn factorize(&self) -> Result<SparseLu> {
        let triplets: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(SparseLu { n: self.n, lu })
    }
}

pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        let mut col = faer::Col::<f64>::from_fn(self.n, |i| rhs[i]);
        self.lu.solve_in_place(col.as_mat_mut());
        for (i, v) in rhs.iter_mut().enumerate() {
            *v = col[i];
        }
    }
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_zero_dropped() {
        let mut b = TripletBuilder::new(3);
        b.add(0, 1, 1.0);
        b.add(0, 1, 2.0);
        b.add(2, 0, 0.0);
        b.add(1, 1, -1.0);
        let m = b.build();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(2, 0), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![6.0, -2.0, 0.0]);
    }

    #[test]
    fn lu_solves_nonsymmetric_system() {
        let mut b = TripletBuilder::new(4);
        let dense = [
            [4.0, 1.0, 0.0, 0.5],
            [-1.0, 3.0, 1.0, 0.0],
            [0.0, 2.0, 5.0, -1.0],
            [0.3, 0.0, -2.0, 6.0],
        ];
        for (r, row) in dense.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                b.add(r, c, v);
            }
        }
        let m = b.build();
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut rhs = m.mul_vec(&x);
        m.factorize().unwrap().solve_in_place(&mut rhs);
        for (a, e) in rhs.iter().zip(x) {
            assert!((a - e).abs() < 1e-13);
        }
        assert!(m.max_abs_asymmetry() > 0.1);
        assert_eq!(m.transpose().get(0, 1), -1.0);
    }

    #[test]
    fn triplet_csv() {
        let m = CsrMatrix::diagonal(&[2.0, 0.0, 1.5]);
        let mut out = Vec::new();
        m.write_triplets_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "row,col,value\n0,0,2.0000000000000000e0\n2,2,1.5000000000000000e0\n"
        );
    }
}
