//! Compressed sparse row matrices and a restarted GMRES solver.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Field operations needed by [`Csr`] and [`gmres`].
pub trait Scalar:
    Copy
    + Send
    + Sync
    + std::fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::iter::Sum
{
    fn zero() -> Self;
    fn from_f64(x: f64) -> Self;
    fn conj(self) -> Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn conj(self) -> Self {
        self
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for C64 {
    fn zero() -> Self {
        C64::new(0.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        C64::new(x, 0.0)
    }
    fn conj(self) -> Self {
        C64::conj(&self)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Sparse matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, col, v) in triplets {
            assert!(r < nrows && col < ncols, "triplet out of bounds");
            if last == Some((r, col)) {
                let end = values.len() - 1;
                values[end] = values[end] + v;
            } else {
                indices.push(col);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, col));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![T::from_f64(1.0); n])
    }

    pub fn diagonal(d: &[T]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.push((r, self.indices[k], self.values[k]));
            }
        }
        out
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        for r in 0..self.nrows {
            let mut acc = T::zero();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc = acc + self.values[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    pub fn scale(&self, a: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = *v * a);
        out
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: T, other: &Csr<T>, b: T) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(r, col, v)| (r, col, a * v))
            .collect();
        t.extend(other.triplets().into_iter().map(|(r, col, v)| (r, col, b * v)));
        Self::from_triplets(self.nrows, self.ncols, t)
    }

    /// `diag(d) · self`.
    pub fn scale_rows(&self, d: &[T]) -> Self {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] = d[r] * out.values[k];
            }
        }
        out
    }

    /// `self · diag(d)`.
    pub fn scale_cols(&self, d: &[T]) -> Self {
        let mut out = self.clone();
        for k in 0..out.values.len() {
            out.values[k] = out.values[k] * d[out.indices[k]];
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let t = self
            .triplets()
            .into_iter()
            .map(|(r, col, v)| (col, r, v.conj()))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, t)
    }

    /// Plain transpose.
    pub fn transpose(&self) -> Self {
        let t = self
            .triplets()
            .into_iter()
            .map(|(r, col, v)| (col, r, v))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, t)
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &Csr<T>) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let mid = self.indices[k];
                let a = self.values[k];
                for j in other.indptr[mid]..other.indptr[mid + 1] {
                    t.push((r, other.indices[j], a * other.values[j]));
                }
            }
        }
        Self::from_triplets(self.nrows, other.ncols, t)
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (r, col, v) in self.triplets() {
            out[r][col] = out[r][col] + v;
        }
        out
    }

    /// Largest `|A_ij − B_ij|`.
    pub fn max_abs_diff(&self, other: &Csr<T>) -> f64 {
        self.combine(T::from_f64(1.0), other, T::from_f64(-1.0))
            .values
            .iter()
            .map(|v| v.modulus())
            .fold(0.0, f64::max)
    }

    /// Largest absolute row sum, an upper bound on the induced ∞-norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| {
                (self.indptr[r]..self.indptr[r + 1])
                    .map(|k| self.values[k].modulus())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| x.conj() * *y).sum()
}

pub fn norm2<T: Scalar>(a: &[T]) -> f64 {
    a.iter().map(|x| x.modulus().powi(2)).sum::<f64>().sqrt()
}

/// Solver controls for [`gmres`].
#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iter: usize,
    /// Stop when `‖b − Ax‖ ≤ tol · ‖b‖`.
    pub tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            restart: 40,
            max_iter: 4000,
            tol: 1e-13,
        }
    }
}

/// Restarted GMRES with Givens rotations, starting from `x0`.
pub fn gmres<T: Scalar>(a: &Csr<T>, b: &[T], x0: &[T], opts: GmresOptions) -> Result<Vec<T>> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(vec![T::zero(); n]);
    }
    let mut x = x0.to_vec();
    let mut iters = 0;
    let m = opts.restart.max(1);
    loop {
        let ax = a.matvec(&x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(bi, ai)| *bi - *ai).collect();
        let beta = norm2(&r);
        if beta <= opts.tol * bnorm {
            return Ok(x);
        }
        if iters >= opts.max_iter {
            return Err(Error::SolverFailed {
                iterations: iters,
                residual: beta / bnorm,
            });
        }
        let mut v: Vec<Vec<T>> = vec![r.iter().map(|ri| *ri / T::from_f64(beta)).collect()];
        let mut h = vec![vec![T::zero(); m]; m + 1];
        let mut cs = vec![T::zero(); m];
        let mut sn = vec![T::zero(); m];
        let mut g = vec![T::zero(); m + 1];
        g[0] = T::from_f64(beta);
        let mut k_used = 0;
        for j in 0..m {
            iters += 1;
            let mut w = a.matvec(&v[j]);
            for i in 0..=j {
                h[i][j] = dot(&v[i], &w);
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk = *wk - h[i][j] * *vk;
                }
            }
            let wn = norm2(&w);
            h[j + 1][j] = T::from_f64(wn);
            for i in 0..j {
                let tmp = cs[i].conj() * h[i][j] + sn[i].conj() * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = tmp;
            }
            let (hjj, hj1) = (h[j][j], h[j + 1][j]);
            let denom = (hjj.modulus().powi(2) + hj1.modulus().powi(2)).sqrt();
            if denom == 0.0 {
                cs[j] = T::from_f64(1.0);
                sn[j] = T::zero();
            } else {
                cs[j] = hjj / T::from_f64(denom);
                sn[j] = hj1 / T::from_f64(denom);
            }
            h[j][j] = cs[j].conj() * hjj + sn[j].conj() * hj1;
            h[j + 1][j] = T::zero();
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j].conj() * g[j];
            k_used = j + 1;
            if g[j + 1].modulus() <= opts.tol * bnorm * 0.5 || wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| *wi / T::from_f64(wn)).collect());
        }
        let mut y = vec![T::zero(); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in (i + 1)..k_used {
                s = s - h[i][l] * y[l];
            }
            y[i] = s / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            for (xk, vk) in x.iter_mut().zip(&v[i]) {
                *xk = *xk + *yi * *vk;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmres_solves_nonsymmetric_complex() {
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(3.0, 0.5)));
            t.push((i, (i + 1) % n, C64::new(-1.0, 0.2)));
            t.push((i, (i + n - 1) % n, C64::new(0.5, -0.7)));
        }
        let a = Csr::from_triplets(n, n, t);
        let xs: Vec<C64> = (0..n).map(|k| C64::new(k as f64, 1.0 / (k + 1) as f64)).collect();
        let b = a.matvec(&xs);
        let x = gmres(&a, &b, &vec![C64::new(0.0, 0.0); n], GmresOptions::default()).unwrap();
        for (p, q) in x.iter().zip(&xs) {
            assert!((p - q).norm() < 1e-10);
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let a = Csr::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![3.0, -1.0]);
    }
}
