//! Square banded matrices with partial-pivoting LU.
//!
//! Rows are stored contiguously. Each row keeps the window of columns
//! `[i - lower, i + lower + upper]`; the extra `lower` columns on the right
//! absorb the fill that row interchanges introduce into `U`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative pivot threshold against the largest initial band magnitude.
pub const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let width = 2 * lower + upper + 1;
        Self { n, lower, upper, width, data: vec![0.0; n * width] }
    }

    pub fn identity(n: usize, lower: usize, upper: usize) -> Self {
        let mut m = Self::zeros(n, lower, upper);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.lower
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.upper
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.lower >= i && j <= i + self.upper
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.lower - i)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.n && j < self.n, "index ({i}, {j}) out of range");
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Panics when `(i, j)` lies outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.n && j < self.n, "index ({i}, {j}) out of range");
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.lower, self.upper);
        let k = self.idx(i, j);
        self.data[k] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let v = self.get(i, j);
        self.set(i, j, v + value);
    }

    /// Multiply row `i` by `factor`.
    pub fn scale_row(&mut self, i: usize, factor: f64) {
        let start = i * self.width;
        for v in &mut self.data[start..start + self.width] {
            *v *= factor;
        }
    }

    /// Multiply column `j` by `factor`.
    pub fn scale_col(&mut self, j: usize, factor: f64) {
        let lo = j.saturating_sub(self.upper);
        let hi = (j + self.lower).min(self.n - 1);
        for i in lo..=hi {
            let k = self.idx(i, j);
            self.data[k] *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude in row `i`.
    pub fn row_max_abs(&self, i: usize) -> f64 {
        let start = i * self.width;
        self.data[start..start + self.width].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude in every column.
    pub fn col_max_abs(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.lower);
            let hi = (i + self.upper).min(self.n - 1);
            for j in lo..=hi {
                out[j] = out[j].max(self.data[self.idx(i, j)].abs());
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.lower);
            let hi = (i + self.upper).min(self.n - 1);
            for j in lo..=hi {
                d[(i, j)] = self.get(i, j);
            }
        }
        d
    }

    /// `self * x` for a dense right-hand side.
    pub fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n);
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.n {
                let lo = i.saturating_sub(self.lower);
                let hi = (i + self.upper).min(self.n - 1);
                let mut acc = 0.0;
                for j in lo..=hi {
                    acc += self.data[self.idx(i, j)] * x[(j, c)];
                }
                out[(i, c)] = acc;
            }
        }
        out
    }

    /// Factorize in place. Runs in `O(n * lower * (lower + upper))`.
    pub fn factorize(mut self) -> Result<PluFactors> {
        let n = self.n;
        let (lo, up) = (self.lower, self.upper);
        let threshold = SINGULAR_RTOL * self.max_abs();
        let mut pivots = vec![0usize; n];
        let mut multipliers = vec![0.0; n * lo];
        let w = self.width;
        let reach = lo + up; // U's upper bandwidth after interchanges

        for k in 0..n {
            let last = (k + lo).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > threshold) {
                return Err(Error::SingularMatrix { row: k, pivot: best });
            }
            pivots[k] = p;
            let col_end = (k + reach).min(n - 1);
            if p != k {
                for j in k..=col_end {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            let krow = k * w + lo; // offset of (k, k)
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                multipliers[k * lo + (i - k - 1)] = l;
                self.data[ik] = 0.0;
                if l != 0.0 {
                    // (i, j) lives at i*w + j + lo - i; (k, j) at krow + j - k.
                    let ibase = i * w + lo - i;
                    for j in k + 1..=col_end {
                        let kv = self.data[krow + (j - k)];
                        self.data[ibase + j] -= l * kv;
                    }
                }
            }
        }

        Ok(PluFactors { n, lower: lo, upper: up, width: w, u: self.data, multipliers, pivots })
    }
}

/// Immutable PLU factors of a [`BandedMatrix`].
///
/// `A = P_0 L_0 P_1 L_1 ... P_{n-1} L_{n-1} U`, each `P_k` a single row
/// interchange and each `L_k` a unit elementary lower factor.
#[derive(Debug, Clone)]
pub struct PluFactors {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    u: Vec<f64>,
    multipliers: Vec<f64>,
    pivots: Vec<usize>,
}

impl PluFactors {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    #[inline]
    fn u_at(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.width + (j + self.lower - i)]
    }

    /// Dense unit-lower `L` and permutation `P` with `P * L * U = A`.
    pub fn dense_factors(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut u = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..=(i + self.lower + self.upper).min(n - 1) {
                u[(i, j)] = self.u_at(i, j);
            }
        }
        // Accumulate P_0 L_0 ... P_{n-1} L_{n-1} as a dense product.
        let mut pl = DMatrix::identity(n, n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                pl.swap_columns(k, p);
            }
            let mut lk = DMatrix::identity(n, n);
            for i in k + 1..=(k + self.lower).min(n - 1) {
                lk[(i, k)] = self.multipliers[k * self.lower + (i - k - 1)];
            }
            pl *= lk;
        }
        let mut p = DMatrix::identity(n, n);
        for k in 0..n {
            p.swap_columns(k, self.pivots[k]);
        }
        let l = p.transpose() * &pl;
        (p, l, u)
    }

    fn check(&self, b: &DMatrix<f64>) -> Result<()> {
        if b.nrows() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: b.nrows() });
        }
        Ok(())
    }

    /// Solve `A X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(b)?;
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        Ok(x)
    }

    /// Solve `A^T G = B` reusing the factors of `A`.
    pub fn solve_adjoint(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(b)?;
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            self.solve_adjoint_in_place(col.as_mut_slice());
        }
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let lo = self.lower;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                let last = (k + lo).min(n - 1);
                for i in k + 1..=last {
                    x[i] -= self.multipliers[k * lo + (i - k - 1)] * xk;
                }
            }
        }
        let reach = self.lower + self.upper;
        for i in (0..n).rev() {
            let base = i * self.width + lo - i;
            let mut acc = x[i];
            for j in i + 1..=(i + reach).min(n - 1) {
                acc -= self.u[base + j] * x[j];
            }
            x[i] = acc / self.u[base + i];
        }
    }

    pub fn solve_adjoint_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let lo = self.lower;
        let reach = self.lower + self.upper;
        // U^T y = b, forward substitution by columns of U.
        for i in 0..n {
            let base = i * self.width + lo - i;
            let yi = x[i] / self.u[base + i];
            x[i] = yi;
            if yi != 0.0 {
                for j in i + 1..=(i + reach).min(n - 1) {
                    x[j] -= self.u[base + j] * yi;
                }
            }
        }
        // Then L_k^{-T} followed by P_k, from the last factor back.
        for k in (0..n).rev() {
            let last = (k + lo).min(n - 1);
            let mut acc = x[k];
            for i in k + 1..=last {
                acc -= self.multipliers[k * lo + (i - k - 1)] * x[i];
            }
            x[k] = acc;
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
        }
    }
}
