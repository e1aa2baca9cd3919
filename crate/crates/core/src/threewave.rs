//! Quantized three-wave interaction restricted to a conserved subspace.
//!
//! `H = i g a₁†a₂a₃ − i g* a₁a₂†a₃†` (ħ = 1) conserves `s₂ = n₁ + n₂` and
//! `s₃ = n₁ + n₃`. With `s₂ ≥ s₃` the subspace basis is
//! `|j⟩ = |s₃ − j, s₂ − s₃ + j, j⟩`, `j = 0..=s₃`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, hermitian_eigen, OperatorMatrix, C64};

/// Conserved subspace, stored with `s2 ≥ s3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subspace {
    pub s2: u64,
    pub s3: u64,
    /// True when the caller's modes 2 and 3 were exchanged to reach `s2 ≥ s3`.
    pub swapped: bool,
}

impl Subspace {
    pub fn new(s2: i64, s3: i64) -> Result<Self> {
        if s2 < 0 || s3 < 0 {
            return Err(invalid("s2/s3", format!("invariants must be non-negative (got {s2}, {s3})")));
        }
        let (a, b) = (s2 as u64, s3 as u64);
        Ok(if a >= b {
            Self { s2: a, s3: b, swapped: false }
        } else {
            Self { s2: b, s3: a, swapped: true }
        })
    }

    /// `min(s2, s3) + 1`.
    pub fn dim(&self) -> usize {
        self.s3 as usize + 1
    }

    /// Occupations `(n1, n2, n3)` of basis state `j` in the caller's mode labels.
    pub fn occupations(&self, j: usize) -> [u64; 3] {
        let j = j as u64;
        let (n1, n2, n3) = (self.s3 - j, self.s2 - self.s3 + j, j);
        if self.swapped {
            [n1, n3, n2]
        } else {
            [n1, n2, n3]
        }
    }

    /// Invariants in the caller's labels.
    pub fn invariants(&self) -> (u64, u64) {
        if self.swapped {
            (self.s3, self.s2)
        } else {
            (self.s2, self.s3)
        }
    }

    /// `H_{j−½} = √(j (s3 + 1 − j)(s2 − s3 + j))` for `j = 1..=s3`.
    pub fn coupling(&self, j: u64) -> f64 {
        let (s2, s3) = (self.s2 as f64, self.s3 as f64);
        let j = j as f64;
        (j * (s3 + 1.0 - j) * (s2 - s3 + j)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceHamiltonian {
    pub subspace: Subspace,
    pub g: C64,
    pub matrix: OperatorMatrix,
}

/// Tridiagonal Hamiltonian with `H[j, j+1] = i g H_{j+½}` and its Hermitian conjugate.
pub fn build_subspace_hamiltonian(s2: i64, s3: i64, g: C64) -> Result<SubspaceHamiltonian> {
    if !(g.re.is_finite() && g.im.is_finite()) {
        return Err(invalid("g", "must be finite"));
    }
    let subspace = Subspace::new(s2, s3)?;
    let d = subspace.dim();
    let mut h = OperatorMatrix::zeros(d, d);
    let i = C64::new(0.0, 1.0);
    for j in 0..d - 1 {
        let hj = subspace.coupling(j as u64 + 1);
        h[(j, j + 1)] = i * g * hj;
        h[(j + 1, j)] = -i * g.conj() * hj;
    }
    Ok(SubspaceHamiltonian {
        subspace,
        g,
        matrix: h,
    })
}

/// Exact propagation through the Hermitian eigendecomposition.
#[derive(Debug, Clone)]
pub struct Propagator {
    values: Vec<f64>,
    vectors: OperatorMatrix,
}

impl Propagator {
    pub fn new(h: &SubspaceHamiltonian) -> Self {
        let (values, vectors) = hermitian_eigen(&h.matrix);
        Self { values, vectors }
    }

    /// `exp(−iHt)`.
    pub fn unitary(&self, t: f64) -> OperatorMatrix {
        let d = self.values.len();
        let mut scaled = self.vectors.clone();
        for (k, lam) in self.values.iter().enumerate() {
            let ph = C64::from_polar(1.0, -lam * t);
            for r in 0..d {
                scaled[(r, k)] *= ph;
            }
        }
        scaled * self.vectors.adjoint()
    }

    /// `exp(−iHt) ψ` directly, for any `t`.
    pub fn fast_forward(&self, psi: &[C64], t: f64) -> Vec<C64> {
        let d = self.values.len();
        let coeffs: Vec<C64> = (0..d)
            .map(|k| {
                let c: C64 = (0..d).map(|r| self.vectors[(r, k)].conj() * psi[r]).sum();
                c * C64::from_polar(1.0, -self.values[k] * t)
            })
            .collect();
        (0..d)
            .map(|r| (0..d).map(|k| self.vectors[(r, k)] * coeffs[k]).sum())
            .collect()
    }
}

fn check_state(h: &SubspaceHamiltonian, psi0: &[C64]) -> Result<()> {
    if psi0.len() != h.subspace.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.subspace.dim(),
            got: psi0.len(),
        });
    }
    let norm = linalg::norm_sqr(psi0).sqrt();
    if (norm - 1.0).abs() > crate::state::NORM_TOL {
        return Err(Error::Unnormalized { norm });
    }
    Ok(())
}

/// States at `t = k·dt`, `k = 0..=n_steps`.
pub fn propagate(h: &SubspaceHamiltonian, psi0: &[C64], dt: f64, n_steps: usize) -> Result<Vec<Vec<C64>>> {
    check_state(h, psi0)?;
    if !dt.is_finite() {
        return Err(invalid("dt", "must be finite"));
    }
    let u = Propagator::new(h).unitary(dt);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(psi0.to_vec());
    for k in 0..n_steps {
        let next = linalg::matvec(&u, &out[k]);
        out.push(next);
    }
    Ok(out)
}

/// `exp(−iHt) ψ₀` without intermediate steps.
pub fn fast_forward(h: &SubspaceHamiltonian, psi0: &[C64], t: f64) -> Result<Vec<C64>> {
    check_state(h, psi0)?;
    Ok(Propagator::new(h).fast_forward(psi0, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupations {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    /// `⟨n₁²⟩`.
    pub n1_sq: f64,
}

pub fn occupation_expectations(traj: &[Vec<C64>], subspace: &Subspace) -> Vec<Occupations> {
    traj.iter()
        .map(|psi| {
            let mut o = Occupations {
                n1: 0.0,
                n2: 0.0,
                n3: 0.0,
                n1_sq: 0.0,
            };
            for (j, a) in psi.iter().enumerate() {
                let w = a.norm_sqr();
                let [n1, n2, n3] = subspace.occupations(j).map(|x| x as f64);
                o.n1 += w * n1;
                o.n2 += w * n2;
                o.n3 += w * n3;
                o.n1_sq += w * n1 * n1;
            }
            o
        })
        .collect()
}

/// Right-hand side used when checking `∂²⟨n₁⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentForm {
    /// `2|g|²[s₂s₃ − (2s₂ + 2s₃ + 1)⟨n₁⟩ + 3⟨n₁²⟩]`.
    Quantum,
    /// Quantum form with the spontaneous-emission `+1` dropped.
    WithoutSpontaneous,
    /// `2|g|²[s₂s₃ − 2(s₂ + s₃)n₁ + 3n₁²]` for a single classical trajectory.
    Classical,
}

pub fn moment_rhs(form: MomentForm, g: C64, s2: f64, s3: f64, n1: f64, n1_sq: f64) -> f64 {
    let g2 = 2.0 * g.norm_sqr();
    match form {
        MomentForm::Quantum => g2 * (s2 * s3 - (2.0 * s2 + 2.0 * s3 + 1.0) * n1 + 3.0 * n1_sq),
        MomentForm::WithoutSpontaneous => g2 * (s2 * s3 - (2.0 * s2 + 2.0 * s3) * n1 + 3.0 * n1_sq),
        MomentForm::Classical => g2 * (s2 * s3 - 2.0 * (s2 + s3) * n1 + 3.0 * n1 * n1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentResidual {
    /// Residual at interior samples `t = 1..len−1`.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// `max |∂²⟨n₁⟩ + ∂²⟨n₂⟩|, |∂²⟨n₁⟩ + ∂²⟨n₃⟩|`.
    pub max_symmetry_residual: f64,
}

fn second_difference(x: &[f64], k: usize, dt: f64) -> f64 {
    (x[k + 1] - 2.0 * x[k] + x[k - 1]) / (dt * dt)
}

/// Compares a central second difference of `⟨n₁⟩` with the moment equation.
pub fn verify_moment_equation(
    occ: &[Occupations],
    subspace: &Subspace,
    g: C64,
    dt: f64,
    form: MomentForm,
) -> Result<MomentResidual> {
    if occ.len() < 3 {
        return Err(invalid("trajectory", "need at least three samples"));
    }
    let (s2, s3) = subspace.invariants();
    let n1: Vec<f64> = occ.iter().map(|o| o.n1).collect();
    let n2: Vec<f64> = occ.iter().map(|o| o.n2).collect();
    let n3: Vec<f64> = occ.iter().map(|o| o.n3).collect();
    let mut residuals = Vec::with_capacity(occ.len() - 2);
    let mut sym: f64 = 0.0;
    for k in 1..occ.len() - 1 {
        let d1 = second_difference(&n1, k, dt);
        let rhs = moment_rhs(form, g, s2 as f64, s3 as f64, occ[k].n1, occ[k].n1_sq);
        residuals.push((d1 - rhs).abs());
        sym = sym
            .max((d1 + second_difference(&n2, k, dt)).abs())
            .max((d1 + second_difference(&n3, k, dt)).abs());
    }
    Ok(MomentResidual {
        max_residual: residuals.iter().copied().fold(0.0, f64::max),
        residuals,
        max_symmetry_residual: sym,
    })
}

/// Largest `dt · |g| · max|a|` accepted by [`classical_threewave`].
pub const CLASSICAL_STEP_GUARD: f64 = 0.1;

/// RK4 for `ȧ₁ = g a₂a₃`, `ȧ₂ = −g* a₁a₃*`, `ȧ₃ = −g* a₁a₂*`.
pub fn classical_threewave(a0: [C64; 3], g: C64, dt: f64, n_steps: usize) -> Result<Vec<[C64; 3]>> {
    let amax = a0.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let limit = CLASSICAL_STEP_GUARD / (g.norm() * amax.max(1e-300));
    if !(dt > 0.0 && dt.is_finite()) || dt > limit {
        return Err(Error::StepTooLarge { dt, limit });
    }
    let f = |a: &[C64; 3]| -> [C64; 3] {
        [
            g * a[1] * a[2],
            -g.conj() * a[0] * a[2].conj(),
            -g.conj() * a[0] * a[1].conj(),
        ]
    };
    let axpy = |a: &[C64; 3], k: &[C64; 3], h: f64| -> [C64; 3] {
        [a[0] + k[0] * h, a[1] + k[1] * h, a[2] + k[2] * h]
    };
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(a0);
    let mut a = a0;
    for _ in 0..n_steps {
        let k1 = f(&a);
        let k2 = f(&axpy(&a, &k1, dt / 2.0));
        let k3 = f(&axpy(&a, &k2, dt / 2.0));
        let k4 = f(&axpy(&a, &k3, dt));
        for m in 0..3 {
            a[m] += (k1[m] + k2[m] * 2.0 + k3[m] * 2.0 + k4[m]) * (dt / 6.0);
        }
        if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("classical three-wave amplitudes"));
        }
        out.push(a);
    }
    Ok(out)
}

/// Product coherent state `|α₁⟩|α₂⟩|α₃⟩` projected onto the subspace and renormalized.
pub fn projected_coherent_state(subspace: &Subspace, alpha: [C64; 3]) -> Result<Vec<C64>> {
    let d = subspace.dim();
    let ln_fact = |n: u64| -> f64 { (1..=n).map(|k| (k as f64).ln()).sum() };
    let mut out = Vec::with_capacity(d);
    let logs: Vec<Option<(f64, f64)>> = (0..d)
        .map(|j| {
            let n = subspace.occupations(j);
            if (0..3).any(|m| n[m] > 0 && alpha[m].norm() == 0.0) {
                return None;
            }
            let mut lm = 0.0;
            let mut ph = 0.0;
            for m in 0..3 {
                if n[m] > 0 {
                    lm += n[m] as f64 * alpha[m].norm().ln();
                    ph += n[m] as f64 * alpha[m].arg();
                }
                lm -= 0.5 * ln_fact(n[m]);
            }
            Some((lm, ph))
        })
        .collect();
    let top = logs
        .iter()
        .flatten()
        .map(|x| x.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(invalid("alpha", "projection onto the subspace vanishes"));
    }
    for l in &logs {
        out.push(match l {
            Some((lm, ph)) => C64::from_polar((lm - top).exp(), *ph),
            None => C64::new(0.0, 0.0),
        });
    }
    let norm = linalg::norm_sqr(&out).sqrt();
    Ok(out.into_iter().map(|a| a / norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalizes_and_relabels() {
        let h = build_subspace_hamiltonian(4, 6, C64::new(1.0, 0.0)).unwrap();
        assert_eq!((h.subspace.s2, h.subspace.s3), (6, 4));
        assert!(h.subspace.swapped);
        assert_eq!(h.subspace.dim(), 5);
        // j = 0 is |4, 2, 0⟩ canonically, i.e. |4, 0, 2⟩ in caller labels.
        assert_eq!(h.subspace.occupations(0), [4, 0, 2]);
        assert!(build_subspace_hamiltonian(-1, 2, C64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn rabi_limit() {
        let g = C64::new(0.7, 0.0);
        let h = build_subspace_hamiltonian(1, 1, g).unwrap();
        let psi0 = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let traj = propagate(&h, &psi0, 0.01, 300).unwrap();
        let occ = occupation_expectations(&traj, &h.subspace);
        for (k, o) in occ.iter().enumerate() {
            let t = k as f64 * 0.01;
            assert!((o.n1 - (0.7 * t).cos().powi(2)).abs() < 1e-12);
        }
    }
}
