//! Dense complex linear-algebra helpers shared by the simulators.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Dense complex operator on a finite-dimensional Hilbert space.
pub type OperatorMatrix = DMatrix<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest elementwise modulus of `a - b`.
pub fn max_abs_diff(a: &OperatorMatrix, b: &OperatorMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `max |U†U - 1|` elementwise.
pub fn unitarity_deviation(u: &OperatorMatrix) -> f64 {
    let n = u.nrows();
    let prod = u.adjoint() * u;
    max_abs_diff(&prod, &OperatorMatrix::identity(n, n))
}

pub fn hermiticity_deviation(h: &OperatorMatrix) -> f64 {
    max_abs_diff(h, &h.adjoint())
}

pub fn ensure_square(m: &OperatorMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn ensure_unitary(u: &OperatorMatrix, tol: f64) -> Result<()> {
    ensure_square(u)?;
    let deviation = unitarity_deviation(u);
    if deviation > tol || !deviation.is_finite() {
        return Err(Error::NonUnitary { deviation });
    }
    Ok(())
}

pub fn ensure_hermitian(h: &OperatorMatrix, tol: f64) -> Result<()> {
    ensure_square(h)?;
    let deviation = hermiticity_deviation(h);
    if deviation > tol || !deviation.is_finite() {
        return Err(Error::NonHermitian { deviation });
    }
    Ok(())
}

/// Kronecker product `a ⊗ b` (first factor is the most significant index).
pub fn kron(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    a.kronecker(b)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(h: &OperatorMatrix) -> (Vec<f64>, OperatorMatrix) {
    let herm = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let n = h.nrows();
    let vectors = OperatorMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// Applies a real function to the spectrum of a Hermitian matrix.
pub fn hermitian_function(h: &OperatorMatrix, f: impl Fn(f64) -> C64) -> OperatorMatrix {
    let (values, vecs) = hermitian_eigen(h);
    let n = h.nrows();
    let mut scaled = vecs.clone();
    for (k, &lam) in values.iter().enumerate() {
        let fk = f(lam);
        for r in 0..n {
            scaled[(r, k)] *= fk;
        }
    }
    scaled * vecs.adjoint()
}

/// `exp(-i H t)` for Hermitian `H`.
pub fn expm_hermitian(h: &OperatorMatrix, t: f64) -> OperatorMatrix {
    hermitian_function(h, |lam| C64::from_polar(1.0, -lam * t))
}

/// Principal square root of a positive semidefinite Hermitian matrix.
pub fn sqrtm_psd(h: &OperatorMatrix) -> OperatorMatrix {
    hermitian_function(h, |lam| C64::new(lam.max(0.0).sqrt(), 0.0))
}

/// General matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(a: &OperatorMatrix) -> OperatorMatrix {
    let n = a.nrows();
    let norm: f64 = (0..n)
        .map(|r| (0..n).map(|col| a[(r, col)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    if norm > 0.25 {
        squarings = (norm / 0.25).log2().ceil() as u32;
    }
    let scaled = a / C64::new(2f64.powi(squarings as i32), 0.0);
    let mut result = OperatorMatrix::identity(n, n);
    let mut term = OperatorMatrix::identity(n, n);
    for k in 1..=24 {
        term = &term * &scaled / C64::new(k as f64, 0.0);
        result += &term;
        if term.iter().all(|z| z.norm() < 1e-18) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Inner product `⟨a|b⟩`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn matvec(m: &OperatorMatrix, v: &[C64]) -> Vec<C64> {
    let x = DVector::from_column_slice(v);
    (m * x).as_slice().to_vec()
}

/// Unitary whose first column is the normalized vector `v` (Householder reflection).
pub fn state_preparation_unitary(v: &[C64]) -> Result<OperatorMatrix> {
    let n = v.len();
    let nrm = norm_sqr(v).sqrt();
    if nrm == 0.0 || !nrm.is_finite() {
        return Err(Error::Unnormalized { norm: nrm });
    }
    let psi: Vec<C64> = v.iter().map(|z| z / nrm).collect();
    // Householder reflection taking e0 onto psi/phase, where the phase makes the
    // first component real and non-negative.
    let phase = if psi[0].norm() > 0.0 {
        psi[0] / psi[0].norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let mut w: Vec<C64> = psi.iter().map(|z| -z / phase).collect();
    w[0] += C64::new(1.0, 0.0);
    let wn = norm_sqr(&w);
    let mut u = OperatorMatrix::identity(n, n);
    if wn > 1e-30 {
        for r in 0..n {
            for col in 0..n {
                u[(r, col)] -= w[r] * w[col].conj() * (2.0 / wn);
            }
        }
    }
    Ok(u * phase)
}
