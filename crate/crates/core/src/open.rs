//! GKLS master equation, Kraus channels and gate-level noise.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c, hermitian_eigen, OperatorMatrix, C64};
use crate::state::{fidelity, Circuit, DensityMatrix, StateRef, StateVector};

/// Hermiticity tolerance for Hamiltonians.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Most negative eigenvalue tolerated after a step.
pub const POSITIVITY_TOL: f64 = 1e-6;
/// `dt · ‖generator‖` must not exceed this.
pub const STEP_GUARD: f64 = 0.1;

/// `σ₋ = |0⟩⟨1|`, taking the excited state `|1⟩` to `|0⟩`.
pub fn sigma_minus() -> OperatorMatrix {
    OperatorMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
}

pub fn sigma_plus() -> OperatorMatrix {
    sigma_minus().adjoint()
}

pub fn sigma_z() -> OperatorMatrix {
    OperatorMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])
}

/// `σ_z/√2`; at rate `ν` coherences decay as `e^{−νt}`.
pub fn dephasing_operator() -> OperatorMatrix {
    sigma_z() * c(std::f64::consts::FRAC_1_SQRT_2, 0.0)
}

/// Embeds a single-qubit operator on qubit `q` of an `n`-qubit register.
pub fn embed_single(op: &OperatorMatrix, q: usize, n: usize) -> OperatorMatrix {
    let id = OperatorMatrix::identity(2, 2);
    let mut out = OperatorMatrix::identity(1, 1);
    for k in 0..n {
        out = linalg::kron(&out, if k == q { op } else { &id });
    }
    out
}

/// Hamiltonian plus collapse operators with non-negative rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladModel {
    h: OperatorMatrix,
    ops: Vec<(OperatorMatrix, f64)>,
    /// `Σ ν L†L`.
    decay: OperatorMatrix,
    generator_norm: f64,
}

impl LindbladModel {
    pub fn new(h: OperatorMatrix, ops: Vec<(OperatorMatrix, f64)>) -> Result<Self> {
        let d = linalg::ensure_square(&h)?;
        linalg::ensure_hermitian(&h, HERMITIAN_TOL)?;
        let mut decay = OperatorMatrix::zeros(d, d);
        let spectral = |m: &OperatorMatrix| {
            hermitian_eigen(m)
                .0
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max)
        };
        let mut norm = 2.0 * spectral(&h);
        for (l, rate) in &ops {
            if l.nrows() != d || l.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: l.nrows(),
                });
            }
            if *rate < 0.0 || !rate.is_finite() {
                return Err(invalid("rate", format!("{rate} must be non-negative")));
            }
            let ldl = l.adjoint() * l;
            norm += 2.0 * rate * spectral(&ldl);
            decay += ldl * c(*rate, 0.0);
        }
        Ok(Self {
            h,
            ops,
            decay,
            generator_norm: norm,
        })
    }

    /// General GKLS form `Σ γ_jk (F_j ρ F_k† − ½{F_k†F_j, ρ})`.
    ///
    /// `γ` is diagonalized; negative eigenvalues are rejected.
    pub fn from_rate_matrix(
        h: OperatorMatrix,
        basis: &[OperatorMatrix],
        gamma: &OperatorMatrix,
    ) -> Result<Self> {
        if gamma.nrows() != basis.len() || gamma.ncols() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: gamma.nrows(),
            });
        }
        linalg::ensure_hermitian(gamma, 1e-12)?;
        let (values, vecs) = hermitian_eigen(gamma);
        let scale = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let mut ops = Vec::new();
        for (a, &nu) in values.iter().enumerate() {
            if nu < -1e-12 * scale {
                return Err(Error::NegativeRate { eigenvalue: nu });
            }
            let mut l = OperatorMatrix::zeros(h.nrows(), h.ncols());
            for (j, f) in basis.iter().enumerate() {
                l += f * vecs[(j, a)];
            }
            ops.push((l, nu.max(0.0)));
        }
        Self::new(h, ops)
    }

    /// Single qubit with relaxation `σ₋`, excitation `σ₊` and dephasing `σ_z/√2`.
    pub fn qubit(h: OperatorMatrix, relax: f64, excite: f64, dephase: f64) -> Result<Self> {
        Self::new(
            h,
            vec![
                (sigma_minus(), relax),
                (sigma_plus(), excite),
                (dephasing_operator(), dephase),
            ],
        )
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn hamiltonian(&self) -> &OperatorMatrix {
        &self.h
    }

    pub fn collapse_operators(&self) -> &[(OperatorMatrix, f64)] {
        &self.ops
    }

    /// Upper bound on the generator norm used by the step guard.
    pub fn generator_norm(&self) -> f64 {
        self.generator_norm
    }

    pub fn max_stable_dt(&self) -> f64 {
        if self.generator_norm == 0.0 {
            f64::INFINITY
        } else {
            STEP_GUARD / self.generator_norm
        }
    }

    /// `dρ/dt`.
    pub fn rhs(&self, rho: &OperatorMatrix) -> OperatorMatrix {
        let hr = &self.h * rho;
        let mut out = (&hr - hr.adjoint()) * c(0.0, -1.0);
        let dr = &self.decay * rho;
        out -= (&dr + dr.adjoint()) * c(0.5, 0.0);
        for (l, rate) in &self.ops {
            if *rate > 0.0 {
                out += l * rho * l.adjoint() * c(*rate, 0.0);
            }
        }
        out
    }

    /// Generator acting on column-stacked `vec(ρ)`.
    pub fn superoperator(&self) -> OperatorMatrix {
        let d = self.dim();
        let id = OperatorMatrix::identity(d, d);
        let mut s = (linalg::kron(&id, &self.h) - linalg::kron(&self.h.transpose(), &id)) * c(0.0, -1.0);
        for (l, rate) in &self.ops {
            let ldl = l.adjoint() * l;
            let r = c(*rate, 0.0);
            s += linalg::kron(&l.map(|z| z.conj()), l) * r;
            s -= (linalg::kron(&id, &ldl) + linalg::kron(&ldl.transpose(), &id)) * (r * 0.5);
        }
        s
    }
}

fn check_state(rho: &OperatorMatrix) -> Result<()> {
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("density matrix"));
    }
    let min = hermitian_eigen(rho).0[0];
    if min < -POSITIVITY_TOL {
        return Err(Error::PositivityViolation { min_eigenvalue: min });
    }
    Ok(())
}

/// One RK4 step of the GKLS equation followed by Hermitian re-symmetrization.
pub fn gkls_step(rho: &DensityMatrix, model: &LindbladModel, dt: f64) -> Result<DensityMatrix> {
    if rho.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: rho.dim(),
        });
    }
    let limit = model.max_stable_dt();
    if dt > limit * (1.0 + 1e-12) || dt < 0.0 || !dt.is_finite() {
        return Err(Error::StepTooLarge { dt, limit });
    }
    let r = rho.matrix();
    let half = c(0.5 * dt, 0.0);
    let k1 = model.rhs(r);
    let k2 = model.rhs(&(r + &k1 * half));
    let k3 = model.rhs(&(r + &k2 * half));
    let k4 = model.rhs(&(r + &k3 * c(dt, 0.0)));
    let next = r + (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
    let mut out = DensityMatrix::from_matrix_unchecked(next);
    out.symmetrize();
    check_state(out.matrix())?;
    Ok(out)
}

/// Integrates for time `t` with the largest equal substeps not exceeding `max_dt`
/// and the stability guard.
pub fn gkls_evolve(
    rho: &DensityMatrix,
    model: &LindbladModel,
    t: f64,
    max_dt: f64,
) -> Result<DensityMatrix> {
    if t < 0.0 || !t.is_finite() {
        return Err(invalid("t", format!("{t} must be non-negative")));
    }
    if t == 0.0 {
        return Ok(rho.clone());
    }
    let dt_cap = max_dt.min(model.max_stable_dt());
    let steps = (t / dt_cap).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let mut cur = rho.clone();
    for _ in 0..steps {
        cur = gkls_step(&cur, model, dt)?;
    }
    Ok(cur)
}

/// Exact propagation `vec(ρ(t)) = exp(𝓛t) vec(ρ)`; practical for `D ≤ 8`.
pub fn gkls_exact(rho: &DensityMatrix, model: &LindbladModel, t: f64) -> Result<DensityMatrix> {
    if rho.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: rho.dim(),
        });
    }
    let d = rho.dim();
    let prop = linalg::expm(&(model.superoperator() * c(t, 0.0)));
    let v = linalg::matvec(&prop, rho.matrix().as_slice());
    Ok(DensityMatrix::from_matrix_unchecked(DMatrix::from_column_slice(d, d, &v)))
}

/// Completely positive trace-preserving map in Kraus form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumChannel {
    kraus: Vec<OperatorMatrix>,
}

impl QuantumChannel {
    /// Checks `Σ K†K = I` to `1e-8`.
    pub fn new(kraus: Vec<OperatorMatrix>) -> Result<Self> {
        let d = kraus
            .first()
            .map(|k| k.nrows())
            .ok_or_else(|| invalid("kraus", "empty operator list"))?;
        let mut sum = OperatorMatrix::zeros(d, d);
        for k in &kraus {
            if k.nrows() != d || k.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: k.nrows(),
                });
            }
            sum += k.adjoint() * k;
        }
        let deviation = linalg::max_abs_diff(&sum, &OperatorMatrix::identity(d, d));
        if deviation > 1e-8 {
            return Err(Error::IncompleteKraus { deviation });
        }
        Ok(Self { kraus })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            kraus: vec![OperatorMatrix::identity(d, d)],
        }
    }

    /// `ρ → (1−p)ρ + p·I/D`, built from the Weyl clock-shift basis.
    pub fn depolarizing(d: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid("p", format!("{p} outside [0, 1]")));
        }
        let omega = |k: usize| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / d as f64);
        let df = d as f64;
        let mut kraus = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                let weight = if a == 0 && b == 0 {
                    (1.0 - p + p / (df * df)).sqrt()
                } else {
                    p.sqrt() / df
                };
                if weight == 0.0 {
                    continue;
                }
                // W_ab |j⟩ = ω^{bj} |j + a⟩
                let mut w = OperatorMatrix::zeros(d, d);
                for j in 0..d {
                    w[((j + a) % d, j)] = omega((b * j) % d) * weight;
                }
                kraus.push(w);
            }
        }
        Self::new(kraus)
    }

    /// Complete dephasing `ρ → Diag(ρ)`.
    pub fn full_dephasing(d: usize) -> Self {
        let kraus = (0..d)
            .map(|j| {
                let mut p = OperatorMatrix::zeros(d, d);
                p[(j, j)] = c(1.0, 0.0);
                p
            })
            .collect();
        Self { kraus }
    }

    /// Qubit phase damping that multiplies coherences by `coherence ∈ [0, 1]`.
    pub fn phase_damping(coherence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&coherence) {
            return Err(invalid("coherence", format!("{coherence} outside [0, 1]")));
        }
        Self::new(vec![
            OperatorMatrix::identity(2, 2) * c(((1.0 + coherence) / 2.0).sqrt(), 0.0),
            sigma_z() * c(((1.0 - coherence) / 2.0).sqrt(), 0.0),
        ])
    }

    /// Qubit amplitude damping with decay probability `gamma`.
    pub fn amplitude_damping(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(invalid("gamma", format!("{gamma} outside [0, 1]")));
        }
        let o = c(0.0, 0.0);
        Self::new(vec![
            OperatorMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), o, o, c((1.0 - gamma).sqrt(), 0.0)]),
            OperatorMatrix::from_row_slice(2, 2, &[o, c(gamma.sqrt(), 0.0), o, o]),
        ])
    }

    /// Exact single-qubit solution of relaxation (`σ₋`, rate `relax`) and
    /// dephasing (`σ_z/√2`, rate `dephase`) over time `t`.
    pub fn qubit_decoherence(relax: f64, dephase: f64, t: f64) -> Result<Self> {
        let ad = Self::amplitude_damping(1.0 - (-relax * t).exp())?;
        let pd = Self::phase_damping((-dephase * t).exp())?;
        let mut kraus = Vec::new();
        for a in &pd.kraus {
            for b in &ad.kraus {
                kraus.push(a * b);
            }
        }
        Self::new(kraus)
    }

    pub fn dim(&self) -> usize {
        self.kraus[0].nrows()
    }

    pub fn kraus(&self) -> &[OperatorMatrix] {
        &self.kraus
    }
}

/// `ρ → Σ K ρ K†`.
pub fn apply_channel(rho: &DensityMatrix, channel: &QuantumChannel) -> Result<DensityMatrix> {
    if rho.dim() != channel.dim() {
        return Err(Error::DimensionMismatch {
            expected: channel.dim(),
            got: rho.dim(),
        });
    }
    let d = rho.dim();
    let mut out = OperatorMatrix::zeros(d, d);
    for k in &channel.kraus {
        out += k * rho.matrix() * k.adjoint();
    }
    Ok(DensityMatrix::from_matrix_unchecked(out))
}

/// Applies a single-qubit channel to qubit `q` of an `n`-qubit density matrix.
pub fn apply_local_channel(
    rho: &DensityMatrix,
    channel: &QuantumChannel,
    q: usize,
) -> Result<DensityMatrix> {
    let d = rho.dim();
    let n = d.trailing_zeros() as usize;
    if channel.dim() != 2 || !d.is_power_of_two() {
        return Err(invalid("channel", "local channels need a qubit channel on a qubit register"));
    }
    if q >= n {
        return Err(Error::QubitOutOfRange { index: q, n_qubits: n });
    }
    let mask = crate::state::bit_mask(n, q);
    let r = rho.matrix();
    let mut out = OperatorMatrix::zeros(d, d);
    for k in &channel.kraus {
        // K on rows, then K† on columns.
        let mut left = r.clone();
        for col in 0..d {
            for i in (0..d).filter(|i| i & mask == 0) {
                let (a, b) = (r[(i, col)], r[(i | mask, col)]);
                left[(i, col)] = k[(0, 0)] * a + k[(0, 1)] * b;
                left[(i | mask, col)] = k[(1, 0)] * a + k[(1, 1)] * b;
            }
        }
        for row in 0..d {
            for j in (0..d).filter(|j| j & mask == 0) {
                let (a, b) = (left[(row, j)], left[(row, j | mask)]);
                out[(row, j)] += a * k[(0, 0)].conj() + b * k[(0, 1)].conj();
                out[(row, j | mask)] += a * k[(1, 0)].conj() + b * k[(1, 1)].conj();
            }
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(out))
}

/// Per-qubit idle rates, multipliers applied to qubits a gate acts on, and gate durations.
#[derive(Debug, Clone, PartialEq)]
pub struct GateNoiseProfile {
    pub relax: Vec<f64>,
    pub dephase: Vec<f64>,
    pub gate_relax_multiplier: f64,
    pub gate_dephase_multiplier: f64,
    pub single_qubit_duration: f64,
    pub two_qubit_duration: f64,
    /// Largest RK4 substep inside a decoherence segment.
    pub max_dt: f64,
}

impl GateNoiseProfile {
    pub fn uniform(n_qubits: usize, relax: f64, dephase: f64) -> Self {
        Self {
            relax: vec![relax; n_qubits],
            dephase: vec![dephase; n_qubits],
            gate_relax_multiplier: 1.0,
            gate_dephase_multiplier: 1.0,
            single_qubit_duration: 1.0,
            two_qubit_duration: 1.0,
            max_dt: 0.05,
        }
    }

    pub fn with_multipliers(mut self, relax: f64, dephase: f64) -> Self {
        self.gate_relax_multiplier = relax;
        self.gate_dephase_multiplier = dephase;
        self
    }

    pub fn with_durations(mut self, single: f64, two: f64) -> Self {
        self.single_qubit_duration = single;
        self.two_qubit_duration = two;
        self
    }

    pub fn n_qubits(&self) -> usize {
        self.relax.len()
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.relax.len() != n_qubits || self.dephase.len() != n_qubits {
            return Err(Error::DimensionMismatch {
                expected: n_qubits,
                got: self.relax.len().min(self.dephase.len()),
            });
        }
        let all = self
            .relax
            .iter()
            .chain(&self.dephase)
            .chain([
                &self.gate_relax_multiplier,
                &self.gate_dephase_multiplier,
                &self.single_qubit_duration,
                &self.two_qubit_duration,
            ]);
        for v in all {
            if *v < 0.0 || !v.is_finite() {
                return Err(invalid("profile", format!("rates, multipliers and durations must be non-negative (got {v})")));
            }
        }
        if self.max_dt <= 0.0 {
            return Err(invalid("max_dt", "must be positive"));
        }
        Ok(())
    }

    /// Relaxation and dephasing rates of qubit `q` given whether a gate acts on it.
    pub fn rates(&self, q: usize, active: bool) -> (f64, f64) {
        if active {
            (
                self.relax[q] * self.gate_relax_multiplier,
                self.dephase[q] * self.gate_dephase_multiplier,
            )
        } else {
            (self.relax[q], self.dephase[q])
        }
    }

    /// Collapse-operator model for one gate slot.
    pub fn segment_model(&self, active: &[usize]) -> Result<LindbladModel> {
        let n = self.n_qubits();
        let d = 1usize << n;
        let mut ops = Vec::with_capacity(2 * n);
        for q in 0..n {
            let (r, p) = self.rates(q, active.contains(&q));
            ops.push((embed_single(&sigma_minus(), q, n), r));
            ops.push((embed_single(&dephasing_operator(), q, n), p));
        }
        LindbladModel::new(OperatorMatrix::zeros(d, d), ops)
    }
}

/// Noisy and ideal trajectories of a circuit, one entry per gate boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyRun {
    /// `states[0]` is the input; `states[k]` follows gate `k`.
    pub states: Vec<DensityMatrix>,
    /// Fidelity against the noiseless evolution after each step.
    pub fidelity: Vec<f64>,
}

/// Interleaves exact gates with GKLS decoherence segments.
///
/// Qubits touched by a gate decohere at multiplied rates for the gate duration;
/// the rest decohere at idle rates.
pub fn noisy_circuit_run<'a>(
    initial: impl Into<StateRef<'a>>,
    circuit: &Circuit,
    profile: &GateNoiseProfile,
) -> Result<NoisyRun> {
    let n = circuit.n_qubits();
    profile.validate(n)?;
    let initial = initial.into();
    let mut rho = match initial {
        StateRef::Pure(p) => DensityMatrix::from_pure(p),
        StateRef::Mixed(m) => m.clone(),
    };
    if rho.dim() != 1 << n {
        return Err(Error::DimensionMismatch {
            expected: 1 << n,
            got: rho.dim(),
        });
    }
    let mut ideal_pure: Option<StateVector> = match initial {
        StateRef::Pure(p) => Some(p.clone()),
        StateRef::Mixed(_) => None,
    };
    let mut ideal_mixed = rho.clone();
    let mut models: HashMap<Vec<usize>, LindbladModel> = HashMap::new();
    let mut states = vec![rho.clone()];
    let mut fid = vec![1.0];
    for gate in circuit.gates() {
        rho.apply_gate(gate)?;
        let mut active = gate.qubits.clone();
        active.sort_unstable();
        if !models.contains_key(&active) {
            models.insert(active.clone(), profile.segment_model(&active)?);
        }
        let duration = if gate.is_two_qubit() {
            profile.two_qubit_duration
        } else {
            profile.single_qubit_duration
        };
        rho = gkls_evolve(&rho, &models[&active], duration, profile.max_dt)?;
        let f = match ideal_pure.as_mut() {
            Some(psi) => {
                psi.apply_mut(gate)?;
                fidelity(&*psi, &rho)?
            }
            None => {
                ideal_mixed.apply_gate(gate)?;
                fidelity(&ideal_mixed, &rho)?
            }
        };
        fid.push(f);
        states.push(rho.clone());
    }
    Ok(NoisyRun {
        states,
        fidelity: fid,
    })
}
