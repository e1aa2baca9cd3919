//! QFT, phase estimation, Grover walks and amplitude estimation.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, OperatorMatrix, C64};
use crate::state::{Circuit, Gate, StateVector, UNITARY_TOL};

/// Whether the final bit-reversal SWAP stage is emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QftSwaps {
    Include,
    /// Output is left bit-reversed; see [`bit_reverse_permute`].
    Elide,
}

/// Gate-level QFT: `|j⟩ → N^{-1/2} Σ_k e^{2πi jk/N} |k⟩`.
///
/// Emits `n` Hadamards, `n(n-1)/2` controlled phases and `⌊n/2⌋` swaps.
pub fn qft_circuit(n_qubits: usize, swaps: QftSwaps) -> Result<Circuit> {
    let mut circuit = Circuit::new(n_qubits);
    for k in 0..n_qubits {
        circuit.push(Gate::h(k))?;
        for l in (k + 1)..n_qubits {
            let order = (l - k + 1) as i32;
            circuit.push(Gate::cr(l, k, 2.0 * PI / 2f64.powi(order)))?;
        }
    }
    if swaps == QftSwaps::Include {
        for k in 0..n_qubits / 2 {
            circuit.push(Gate::swap(k, n_qubits - 1 - k))?;
        }
    }
    Ok(circuit)
}

/// Expected gate count `n(n+1)/2 + ⌊n/2⌋` of [`qft_circuit`] with swaps.
pub fn qft_gate_count(n_qubits: usize) -> usize {
    n_qubits * (n_qubits + 1) / 2 + n_qubits / 2
}

pub fn qft(state: &StateVector) -> Result<StateVector> {
    crate::state::run_circuit(state, &qft_circuit(state.n_qubits(), QftSwaps::Include)?)
}

pub fn inverse_qft(state: &StateVector) -> Result<StateVector> {
    crate::state::run_circuit(
        state,
        &qft_circuit(state.n_qubits(), QftSwaps::Include)?.inverse(),
    )
}

/// Reverses the qubit order of basis labels.
pub fn bit_reverse_permute(amps: &[C64]) -> Vec<C64> {
    let n = amps.len().trailing_zeros();
    (0..amps.len())
        .map(|k| {
            let r = if n == 0 { 0 } else { k.reverse_bits() >> (usize::BITS - n) };
            amps[r]
        })
        .collect()
}

/// FFT-backed QFT for long repeated evolutions. Agrees with [`qft_circuit`].
#[derive(Clone)]
pub struct FastQft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FastQft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FastQft").field("len", &self.len).finish()
    }
}

impl FastQft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            backward: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place QFT (positive exponent, unitary scaling).
    pub fn apply(&self, amps: &mut [C64]) {
        self.backward.process(amps);
        let s = (self.len as f64).sqrt().recip();
        amps.iter_mut().for_each(|a| *a *= s);
    }

    pub fn apply_inverse(&self, amps: &mut [C64]) {
        self.forward.process(amps);
        let s = (self.len as f64).sqrt().recip();
        amps.iter_mut().for_each(|a| *a *= s);
    }
}

/// Outcome of phase estimation with eigenvalue convention `U|ψ⟩ = e^{iα}|ψ⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEstimate {
    /// Probability of each ancilla outcome `y ∈ [0, 2^m)`.
    pub distribution: Vec<f64>,
    /// Most likely outcome.
    pub mode: usize,
    /// `α = 2π · mode / 2^m`.
    pub phase: f64,
    /// `‖Uv − ⟨v|U|v⟩ v‖`.
    pub eigvec_residual: f64,
    /// False when the residual exceeds `1e-8`; the distribution is then a mixture.
    pub is_eigenvector: bool,
}

fn ancilla_dim(m_bits: usize) -> Result<usize> {
    if m_bits == 0 || m_bits > 20 {
        return Err(invalid("m_bits", format!("{m_bits} outside 1..=20")));
    }
    Ok(1usize << m_bits)
}

/// Phase estimation with a user-supplied power oracle.
///
/// `apply_power(block, p)` must replace `block` by `U^p · block`; `p` is always a
/// power of two.
pub fn phase_estimation_with<F>(
    apply_power: F,
    eigvec: &[C64],
    m_bits: usize,
    eigvec_residual: f64,
) -> Result<PhaseEstimate>
where
    F: Fn(&mut [C64], usize),
{
    let m_dim = ancilla_dim(m_bits)?;
    let d = eigvec.len();
    let norm = linalg::norm_sqr(eigvec).sqrt();
    if (norm - 1.0).abs() > crate::state::NORM_TOL {
        return Err(Error::Unnormalized { norm });
    }
    // Register layout: amplitude (y, t) lives at y * d + t with y the ancilla value.
    let amp0 = C64::new((m_dim as f64).sqrt().recip(), 0.0);
    let mut amps: Vec<C64> = (0..m_dim)
        .flat_map(|_| eigvec.iter().map(move |v| v * amp0))
        .collect();
    for k in 0..m_bits {
        let weight = 1usize << (m_bits - 1 - k);
        for y in (0..m_dim).filter(|y| y & weight != 0) {
            apply_power(&mut amps[y * d..(y + 1) * d], weight);
        }
    }
    let iqft = qft_circuit(m_bits, QftSwaps::Include)?.inverse();
    let mut column = vec![C64::new(0.0, 0.0); m_dim];
    for t in 0..d {
        for y in 0..m_dim {
            column[y] = amps[y * d + t];
        }
        iqft.apply_to_slice(&mut column);
        for y in 0..m_dim {
            amps[y * d + t] = column[y];
        }
    }
    let distribution: Vec<f64> = (0..m_dim)
        .map(|y| linalg::norm_sqr(&amps[y * d..(y + 1) * d]))
        .collect();
    let mode = argmax(&distribution);
    Ok(PhaseEstimate {
        phase: 2.0 * PI * mode as f64 / m_dim as f64,
        mode,
        distribution,
        eigvec_residual,
        is_eigenvector: eigvec_residual <= 1e-8,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in v.iter().enumerate() {
        if p > v[best] + 1e-15 {
            best = k;
        }
    }
    best
}

/// Phase estimation of a dense unitary on a supplied (approximate) eigenvector.
pub fn phase_estimation(u: &OperatorMatrix, eigvec: &[C64], m_bits: usize) -> Result<PhaseEstimate> {
    linalg::ensure_unitary(u, UNITARY_TOL)?;
    if u.nrows() != eigvec.len() {
        return Err(Error::DimensionMismatch {
            expected: u.nrows(),
            got: eigvec.len(),
        });
    }
    ancilla_dim(m_bits)?;
    let uv = linalg::matvec(u, eigvec);
    let lambda = linalg::inner(eigvec, &uv);
    let residual = uv
        .iter()
        .zip(eigvec)
        .map(|(a, v)| (a - lambda * v).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let mut powers = Vec::with_capacity(m_bits);
    let mut p = u.clone();
    for _ in 0..m_bits {
        powers.push(p.clone());
        p = &p * &p;
    }
    phase_estimation_with(
        |block, power| {
            let k = power.trailing_zeros() as usize;
            let out = linalg::matvec(&powers[k], block);
            block.copy_from_slice(&out);
        },
        eigvec,
        m_bits,
        residual,
    )
}

/// Marked set of a search problem, realized as a diagonal sign oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleSpec {
    marked: Vec<bool>,
}

impl OracleSpec {
    pub fn from_indices(dim: usize, marked: &[usize]) -> Result<Self> {
        let mut flags = vec![false; dim];
        for &m in marked {
            if m >= dim {
                return Err(invalid("marked", format!("index {m} >= {dim}")));
            }
            flags[m] = true;
        }
        Ok(Self { marked: flags })
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize) -> bool) -> Self {
        Self {
            marked: (0..dim).map(f).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.marked.len()
    }

    pub fn is_marked(&self, x: usize) -> bool {
        self.marked[x]
    }

    pub fn marked_count(&self) -> usize {
        self.marked.iter().filter(|&&m| m).count()
    }

    /// `O_f = I - 2 Σ_marked |x⟩⟨x|`.
    pub fn matrix(&self) -> OperatorMatrix {
        let d = self.dim();
        OperatorMatrix::from_fn(d, d, |r, col| {
            if r != col {
                C64::new(0.0, 0.0)
            } else if self.marked[r] {
                C64::new(-1.0, 0.0)
            } else {
                C64::new(1.0, 0.0)
            }
        })
    }
}

/// Grover iterate `G = O_s O_f` with `O_s = 2|s⟩⟨s| − I` and `|s⟩ = A|0⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroverWalk {
    start: Vec<C64>,
    oracle: OracleSpec,
}

impl GroverWalk {
    /// Walsh-Hadamard preparation on `log2(dim)` qubits.
    pub fn uniform(oracle: OracleSpec) -> Result<Self> {
        let d = oracle.dim();
        if d == 0 {
            return Err(invalid("oracle", "empty search space"));
        }
        let a = C64::new((d as f64).sqrt().recip(), 0.0);
        Ok(Self {
            start: vec![a; d],
            oracle,
        })
    }

    /// Arbitrary unitary preparation `A`.
    pub fn with_preparation(prep: &OperatorMatrix, oracle: OracleSpec) -> Result<Self> {
        linalg::ensure_unitary(prep, UNITARY_TOL)?;
        if prep.nrows() != oracle.dim() {
            return Err(Error::DimensionMismatch {
                expected: oracle.dim(),
                got: prep.nrows(),
            });
        }
        Ok(Self {
            start: prep.column(0).iter().copied().collect(),
            oracle,
        })
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn oracle(&self) -> &OracleSpec {
        &self.oracle
    }

    pub fn start_state(&self) -> &[C64] {
        &self.start
    }

    /// Good-subspace weight `a` of the start state.
    pub fn good_fraction(&self) -> f64 {
        self.good_probability(&self.start)
    }

    /// Rotation angle per iterate, `sin(θ/2) = √a`.
    pub fn theta(&self) -> f64 {
        2.0 * self.good_fraction().sqrt().clamp(0.0, 1.0).asin()
    }

    pub fn good_probability(&self, psi: &[C64]) -> f64 {
        psi.iter()
            .enumerate()
            .filter(|(x, _)| self.oracle.marked[*x])
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// `ψ → G ψ`.
    pub fn apply(&self, psi: &mut [C64]) {
        for (x, a) in psi.iter_mut().enumerate() {
            if self.oracle.marked[x] {
                *a = -*a;
            }
        }
        let overlap = linalg::inner(&self.start, psi);
        for (a, s) in psi.iter_mut().zip(&self.start) {
            *a = 2.0 * s * overlap - *a;
        }
    }

    /// `O_s` as a dense matrix.
    pub fn reflection_matrix(&self) -> OperatorMatrix {
        let d = self.dim();
        OperatorMatrix::from_fn(d, d, |r, col| {
            let diag = if r == col { 1.0 } else { 0.0 };
            2.0 * self.start[r] * self.start[col].conj() - diag
        })
    }

    pub fn iterate_matrix(&self) -> OperatorMatrix {
        self.reflection_matrix() * self.oracle.matrix()
    }
}

/// Iteration count `round(π/(2θ) − 1/2)` maximizing the success probability.
pub fn optimal_iterations(theta: f64) -> usize {
    if theta <= 0.0 {
        return 0;
    }
    (PI / (2.0 * theta) - 0.5).round().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroverResult {
    pub state: Vec<C64>,
    /// Overlap with the normalized good component of the start state.
    pub good_amplitude: C64,
    pub success_probability: f64,
}

/// Applies `G^k` to `state`.
pub fn grover_iterate(walk: &GroverWalk, state: &[C64], k: usize) -> Result<GroverResult> {
    if state.len() != walk.dim() {
        return Err(Error::DimensionMismatch {
            expected: walk.dim(),
            got: state.len(),
        });
    }
    let mut psi = state.to_vec();
    for _ in 0..k {
        walk.apply(&mut psi);
    }
    let a = walk.good_fraction();
    let good_amplitude = if a > 0.0 {
        psi.iter()
            .zip(&walk.start)
            .enumerate()
            .filter(|(x, _)| walk.oracle.marked[*x])
            .map(|(_, (p, s))| s.conj() * p)
            .sum::<C64>()
            / a.sqrt()
    } else {
        C64::new(0.0, 0.0)
    };
    Ok(GroverResult {
        success_probability: walk.good_probability(&psi),
        good_amplitude,
        state: psi,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeEstimate {
    /// `â = sin²(π · mode / 2^m)`.
    pub estimate: f64,
    /// Angle read from the mode, `θ = 2π · mode / 2^m`.
    pub theta: f64,
    pub phase: PhaseEstimate,
    /// `π/2^m + π²/2^{2m}`.
    pub error_bound: f64,
}

pub fn amplitude_error_bound(m_bits: usize) -> f64 {
    let m = 2f64.powi(m_bits as i32);
    PI / m + PI * PI / (m * m)
}

/// Amplitude estimation: phase estimation of `G` on `A|0⟩`.
pub fn amplitude_estimate(walk: &GroverWalk, m_bits: usize) -> Result<AmplitudeEstimate> {
    let m_dim = ancilla_dim(m_bits)?;
    let phase = phase_estimation_with(
        |block, power| {
            for _ in 0..power {
                walk.apply(block);
            }
        },
        &walk.start,
        m_bits,
        f64::NAN,
    )?;
    let frac = phase.mode as f64 / m_dim as f64;
    Ok(AmplitudeEstimate {
        estimate: (PI * frac).sin().powi(2),
        theta: 2.0 * PI * frac,
        error_bound: amplitude_error_bound(m_bits),
        phase,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableEstimate {
    /// Estimate of `⟨ψ|O|ψ⟩`.
    pub value: f64,
    /// `O` was divided by this before encoding as an amplitude.
    pub scale: f64,
    pub amplitude: AmplitudeEstimate,
    /// Amplitude bound times `scale`.
    pub error_bound: f64,
}

/// Preparation `A = R (P ⊗ I)` with `P|0⟩ = ψ` and an ancilla rotation
/// `|x⟩|0⟩ → |x⟩(√(1−o(x))|0⟩ + √o(x)|1⟩)`. The ancilla is the last qubit.
pub fn observable_preparation(psi: &StateVector, scaled: &[f64]) -> Result<OperatorMatrix> {
    let n = psi.dim();
    if scaled.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: scaled.len(),
        });
    }
    let p = linalg::state_preparation_unitary(psi.amplitudes())?;
    let mut rot = OperatorMatrix::zeros(2 * n, 2 * n);
    for (x, &o) in scaled.iter().enumerate() {
        let (s, co) = (o.sqrt(), (1.0 - o).max(0.0).sqrt());
        rot[(2 * x, 2 * x)] = C64::new(co, 0.0);
        rot[(2 * x, 2 * x + 1)] = C64::new(-s, 0.0);
        rot[(2 * x + 1, 2 * x)] = C64::new(s, 0.0);
        rot[(2 * x + 1, 2 * x + 1)] = C64::new(co, 0.0);
    }
    let pi = linalg::kron(&p, &OperatorMatrix::identity(2, 2));
    Ok(rot * pi)
}

/// Estimates `⟨ψ|O|ψ⟩` for a non-negative diagonal observable `O(x)`.
///
/// With `scale = None` the observable is divided by `max O(x)`. A supplied scale
/// must dominate every value.
pub fn estimate_observable(
    psi: &StateVector,
    observable: &[f64],
    m_bits: usize,
    scale: Option<f64>,
) -> Result<ObservableEstimate> {
    if observable.len() != psi.dim() {
        return Err(Error::DimensionMismatch {
            expected: psi.dim(),
            got: observable.len(),
        });
    }
    if let Some(x) = observable.iter().position(|&o| o < 0.0 || !o.is_finite()) {
        return Err(invalid(
            "observable",
            format!("O({x}) = {} is negative or non-finite", observable[x]),
        ));
    }
    let max = observable.iter().copied().fold(0.0, f64::max);
    let scale = match scale {
        Some(s) if s <= 0.0 || !s.is_finite() => {
            return Err(invalid("scale", format!("{s} must be positive")))
        }
        Some(s) => {
            if max > s * (1.0 + 1e-12) {
                return Err(invalid(
                    "scale",
                    format!("max O(x) = {max} exceeds scale {s}; rotation angle out of range"),
                ));
            }
            s
        }
        None if max == 0.0 => 1.0,
        None => max,
    };
    let scaled: Vec<f64> = observable.iter().map(|o| (o / scale).min(1.0)).collect();
    let prep = observable_preparation(psi, &scaled)?;
    let oracle = OracleSpec::from_fn(2 * psi.dim(), |i| i % 2 == 1);
    let walk = GroverWalk::with_preparation(&prep, oracle)?;
    let amplitude = amplitude_estimate(&walk, m_bits)?;
    Ok(ObservableEstimate {
        value: amplitude.estimate * scale,
        scale,
        error_bound: amplitude.error_bound * scale,
        amplitude,
    })
}
