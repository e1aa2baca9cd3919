//! Statevectors, density matrices, gates and circuits.
//!
//! Qubit `0` is the most significant bit of a basis index, so the basis label
//! `|q0 q1 ... q(n-1)⟩` reads left to right as a big-endian integer.

use std::collections::BTreeMap;

use nalgebra::Matrix2;
use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c, hermitian_eigen, OperatorMatrix, C64};
use crate::parallel;

/// Tolerance for accepting a state as normalized.
pub const NORM_TOL: f64 = 1e-6;
/// Tolerance for accepting a user matrix as unitary.
pub const UNITARY_TOL: f64 = 1e-8;

#[inline]
pub(crate) fn bit_mask(n_qubits: usize, qubit: usize) -> usize {
    1usize << (n_qubits - 1 - qubit)
}

/// Pure state of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// `|0...0⟩`.
    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0).expect("index 0 always valid")
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(invalid("index", format!("{index} >= {dim}")));
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    /// Equal superposition over all basis states.
    pub fn uniform(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        let a = C64::new((dim as f64).sqrt().recip(), 0.0);
        Self {
            n_qubits,
            amps: vec![a; dim],
        }
    }

    /// Wraps amplitudes that must already be normalized.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let n_qubits = qubits_for_dim(amps.len())?;
        let norm = linalg::norm_sqr(&amps).sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Unnormalized { norm });
        }
        Ok(Self { n_qubits, amps })
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(amps: Vec<C64>) -> Result<Self> {
        let n_qubits = qubits_for_dim(amps.len())?;
        let norm = linalg::norm_sqr(&amps).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Unnormalized { norm });
        }
        let amps = amps.into_iter().map(|a| a / norm).collect();
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        linalg::norm_sqr(&self.amps).sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        linalg::inner(&self.amps, &other.amps)
    }

    /// Tensor product with `self` as the most significant register.
    pub fn tensor(&self, other: &StateVector) -> StateVector {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        StateVector {
            n_qubits: self.n_qubits + other.n_qubits,
            amps,
        }
    }

    /// Applies a gate in place.
    pub fn apply_mut(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        apply_gate_to_slice(&mut self.amps, self.n_qubits, gate);
        Ok(())
    }

    /// Big-endian bitstring label of a basis index.
    pub fn label(&self, index: usize) -> String {
        bitstring(index, self.n_qubits)
    }
}

pub fn bitstring(index: usize, n_qubits: usize) -> String {
    (0..n_qubits)
        .map(|q| {
            if index & bit_mask(n_qubits, q) != 0 {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(invalid("amplitudes", format!("length {dim} is not a power of two")));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// Mixed state `ρ` of dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: OperatorMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(rho: OperatorMatrix) -> Result<Self> {
        linalg::ensure_hermitian(&rho, 1e-10)?;
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(Error::Unnormalized { norm: tr.norm() });
        }
        let dm = Self { rho };
        let min = dm.min_eigenvalue();
        if min < -1e-8 {
            return Err(Error::PositivityViolation { min_eigenvalue: min });
        }
        Ok(dm)
    }

    /// Wraps a matrix without validation. Used by integrators that check separately.
    pub fn from_matrix_unchecked(rho: OperatorMatrix) -> Self {
        Self { rho }
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        Self::from_amplitudes(psi.amplitudes())
    }

    pub fn from_amplitudes(amps: &[C64]) -> Self {
        let d = amps.len();
        let rho = OperatorMatrix::from_fn(d, d, |r, col| amps[r] * amps[col].conj());
        Self { rho }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            rho: OperatorMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn matrix(&self) -> &OperatorMatrix {
        &self.rho
    }

    pub fn into_matrix(self) -> OperatorMatrix {
        self.rho
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.rho * &self.rho).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigen(&self.rho).0.first().copied().unwrap_or(0.0)
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.rho[(k, k)].re).collect()
    }

    /// `ρ → (ρ + ρ†)/2`.
    pub fn symmetrize(&mut self) {
        self.rho = (&self.rho + self.rho.adjoint()) * C64::new(0.5, 0.0);
    }

    /// `ρ → U ρ U†` for a gate acting on an `n`-qubit register.
    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        let n = qubits_for_dim(self.dim())?;
        gate.validate(n)?;
        let d = self.dim();
        // Columns of Uρ, then rows via (U (Uρ)†)†.
        let mut work = self.rho.clone();
        for pass in 0..2 {
            for col in 0..d {
                let mut column: Vec<C64> = work.column(col).iter().copied().collect();
                apply_gate_to_slice(&mut column, n, gate);
                for r in 0..d {
                    work[(r, col)] = column[r];
                }
            }
            work = work.adjoint();
            if pass == 1 {
                break;
            }
        }
        self.rho = work;
        Ok(())
    }

    /// `ρ → U ρ U†` for a dense unitary.
    pub fn conjugate_by(&mut self, u: &OperatorMatrix) -> Result<()> {
        if u.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.nrows(),
            });
        }
        self.rho = u * &self.rho * u.adjoint();
        Ok(())
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn expectation_pure(&self, psi: &[C64]) -> f64 {
        let v = linalg::matvec(&self.rho, psi);
        linalg::inner(psi, &v).re
    }
}

/// Gate kinds. Angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub enum GateKind {
    X,
    Y,
    Z,
    H,
    Rx(f64),
    Ry(f64),
    Rz(f64),
    /// `diag(1, e^{iφ})`.
    Phase(f64),
    Cnot,
    Cz,
    Swap,
    /// Controlled `R(φ)`.
    Cr(f64),
    /// Controlled arbitrary unitary on one or more target qubits.
    Cu(OperatorMatrix),
}

/// A gate bound to qubits. For controlled kinds the control comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
}

impl Gate {
    fn one(kind: GateKind, q: usize) -> Self {
        Self {
            kind,
            qubits: vec![q],
        }
    }

    pub fn x(q: usize) -> Self {
        Self::one(GateKind::X, q)
    }
    pub fn y(q: usize) -> Self {
        Self::one(GateKind::Y, q)
    }
    pub fn z(q: usize) -> Self {
        Self::one(GateKind::Z, q)
    }
    pub fn h(q: usize) -> Self {
        Self::one(GateKind::H, q)
    }
    pub fn rx(q: usize, theta: f64) -> Self {
        Self::one(GateKind::Rx(theta), q)
    }
    pub fn ry(q: usize, theta: f64) -> Self {
        Self::one(GateKind::Ry(theta), q)
    }
    pub fn rz(q: usize, theta: f64) -> Self {
        Self::one(GateKind::Rz(theta), q)
    }
    pub fn phase(q: usize, phi: f64) -> Self {
        Self::one(GateKind::Phase(phi), q)
    }
    pub fn cnot(control: usize, target: usize) -> Self {
        Self {
            kind: GateKind::Cnot,
            qubits: vec![control, target],
        }
    }
    pub fn cz(a: usize, b: usize) -> Self {
        Self {
            kind: GateKind::Cz,
            qubits: vec![a, b],
        }
    }
    pub fn swap(a: usize, b: usize) -> Self {
        Self {
            kind: GateKind::Swap,
            qubits: vec![a, b],
        }
    }
    pub fn cr(control: usize, target: usize, phi: f64) -> Self {
        Self {
            kind: GateKind::Cr(phi),
            qubits: vec![control, target],
        }
    }

    /// Controlled `U` acting on `targets` (first target most significant).
    pub fn cu(control: usize, targets: &[usize], u: OperatorMatrix) -> Result<Self> {
        if u.nrows() != 1usize << targets.len() {
            return Err(Error::DimensionMismatch {
                expected: 1 << targets.len(),
                got: u.nrows(),
            });
        }
        linalg::ensure_unitary(&u, UNITARY_TOL)?;
        let mut qubits = vec![control];
        qubits.extend_from_slice(targets);
        Ok(Self {
            kind: GateKind::Cu(u),
            qubits,
        })
    }

    pub fn is_two_qubit(&self) -> bool {
        self.qubits.len() >= 2
    }

    /// Checks indices against the register size and rejects repeated qubits.
    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let expected = match &self.kind {
            GateKind::Cnot | GateKind::Cz | GateKind::Swap | GateKind::Cr(_) => 2,
            GateKind::Cu(u) => 1 + u.nrows().trailing_zeros() as usize,
            _ => 1,
        };
        if self.qubits.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.qubits.len(),
            });
        }
        for (k, &q) in self.qubits.iter().enumerate() {
            if q >= n_qubits {
                return Err(Error::QubitOutOfRange { index: q, n_qubits });
            }
            if self.qubits[..k].contains(&q) {
                return Err(invalid("qubits", format!("qubit {q} used twice in one gate")));
            }
        }
        Ok(())
    }

    /// Matrix on the targets (the controlled part for controlled kinds).
    pub fn target_matrix(&self) -> OperatorMatrix {
        let m2 = |m: Matrix2<C64>| OperatorMatrix::from_iterator(2, 2, m.iter().copied());
        match &self.kind {
            GateKind::X | GateKind::Cnot => m2(single_qubit_matrix(&GateKind::X)),
            GateKind::Cz => m2(single_qubit_matrix(&GateKind::Z)),
            GateKind::Cr(phi) => m2(single_qubit_matrix(&GateKind::Phase(*phi))),
            GateKind::Swap => {
                let o = c(0.0, 0.0);
                let l = c(1.0, 0.0);
                OperatorMatrix::from_row_slice(
                    4,
                    4,
                    &[l, o, o, o, o, o, l, o, o, l, o, o, o, o, o, l],
                )
            }
            GateKind::Cu(u) => u.clone(),
            k => m2(single_qubit_matrix(k)),
        }
    }

    pub fn inverse(&self) -> Gate {
        let kind = match &self.kind {
            GateKind::Rx(t) => GateKind::Rx(-t),
            GateKind::Ry(t) => GateKind::Ry(-t),
            GateKind::Rz(t) => GateKind::Rz(-t),
            GateKind::Phase(t) => GateKind::Phase(-t),
            GateKind::Cr(t) => GateKind::Cr(-t),
            GateKind::Cu(u) => GateKind::Cu(u.adjoint()),
            k => k.clone(),
        };
        Gate {
            kind,
            qubits: self.qubits.clone(),
        }
    }
}

fn single_qubit_matrix(kind: &GateKind) -> Matrix2<C64> {
    let o = c(0.0, 0.0);
    let l = c(1.0, 0.0);
    match kind {
        GateKind::X => Matrix2::new(o, l, l, o),
        GateKind::Y => Matrix2::new(o, c(0.0, -1.0), c(0.0, 1.0), o),
        GateKind::Z => Matrix2::new(l, o, o, -l),
        GateKind::H => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            Matrix2::new(c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0))
        }
        GateKind::Rx(t) => {
            let (s, co) = (t / 2.0).sin_cos();
            Matrix2::new(c(co, 0.0), c(0.0, -s), c(0.0, -s), c(co, 0.0))
        }
        GateKind::Ry(t) => {
            let (s, co) = (t / 2.0).sin_cos();
            Matrix2::new(c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0))
        }
        GateKind::Rz(t) => Matrix2::new(
            C64::from_polar(1.0, -t / 2.0),
            o,
            o,
            C64::from_polar(1.0, t / 2.0),
        ),
        GateKind::Phase(p) => Matrix2::new(l, o, o, C64::from_polar(1.0, *p)),
        _ => unreachable!("not a single-qubit kind"),
    }
}

/// Applies `u` (2x2) on `target`, restricted to indices where all `controls` are set.
fn apply_single(amps: &mut [C64], n: usize, controls: &[usize], target: usize, u: &Matrix2<C64>) {
    let tmask = bit_mask(n, target);
    let cmask: usize = controls.iter().map(|&q| bit_mask(n, q)).sum();
    let (u00, u01, u10, u11) = (u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)]);
    for i in 0..amps.len() {
        if i & tmask != 0 || i & cmask != cmask {
            continue;
        }
        let j = i | tmask;
        let a = amps[i];
        let b = amps[j];
        amps[i] = u00 * a + u01 * b;
        amps[j] = u10 * a + u11 * b;
    }
}

/// Applies a `2^k x 2^k` unitary on `targets` under `controls`.
fn apply_multi(amps: &mut [C64], n: usize, controls: &[usize], targets: &[usize], u: &OperatorMatrix) {
    let k = targets.len();
    let sub = 1usize << k;
    let masks: Vec<usize> = targets.iter().map(|&q| bit_mask(n, q)).collect();
    let tmask: usize = masks.iter().sum();
    let cmask: usize = controls.iter().map(|&q| bit_mask(n, q)).sum();
    let offsets: Vec<usize> = (0..sub)
        .map(|s| {
            (0..k)
                .filter(|&b| s & (1 << (k - 1 - b)) != 0)
                .map(|b| masks[b])
                .sum()
        })
        .collect();
    let mut buf = vec![C64::new(0.0, 0.0); sub];
    for i in 0..amps.len() {
        if i & tmask != 0 || i & cmask != cmask {
            continue;
        }
        for (s, off) in offsets.iter().enumerate() {
            buf[s] = amps[i | off];
        }
        for (r, off) in offsets.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (s, b) in buf.iter().enumerate() {
                acc += u[(r, s)] * b;
            }
            amps[i | off] = acc;
        }
    }
}

pub(crate) fn apply_gate_to_slice(amps: &mut [C64], n: usize, gate: &Gate) {
    let q = &gate.qubits;
    match &gate.kind {
        GateKind::Cnot => apply_single(amps, n, &q[..1], q[1], &single_qubit_matrix(&GateKind::X)),
        GateKind::Cz => apply_single(amps, n, &q[..1], q[1], &single_qubit_matrix(&GateKind::Z)),
        GateKind::Cr(phi) => apply_single(
            amps,
            n,
            &q[..1],
            q[1],
            &single_qubit_matrix(&GateKind::Phase(*phi)),
        ),
        GateKind::Swap => {
            let (ma, mb) = (bit_mask(n, q[0]), bit_mask(n, q[1]));
            for i in 0..amps.len() {
                if i & ma != 0 && i & mb == 0 {
                    amps.swap(i, (i & !ma) | mb);
                }
            }
        }
        GateKind::Cu(u) => {
            if u.nrows() == 2 {
                let m = Matrix2::new(u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)]);
                apply_single(amps, n, &q[..1], q[1], &m);
            } else {
                apply_multi(amps, n, &q[..1], &q[1..], u);
            }
        }
        kind => apply_single(amps, n, &[], q[0], &single_qubit_matrix(kind)),
    }
}

/// Ordered gate list on a fixed register.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            gates: Vec::new(),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn push(&mut self, gate: Gate) -> Result<&mut Self> {
        gate.validate(self.n_qubits)?;
        self.gates.push(gate);
        Ok(self)
    }

    /// Appends all gates of `other`, which must act on the same register size.
    pub fn extend(&mut self, other: &Circuit) -> Result<&mut Self> {
        if other.n_qubits != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                got: other.n_qubits,
            });
        }
        self.gates.extend(other.gates.iter().cloned());
        Ok(self)
    }

    /// Adjoint circuit: reversed order, each gate inverted.
    pub fn inverse(&self) -> Circuit {
        Circuit {
            n_qubits: self.n_qubits,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
        }
    }

    /// Remaps qubit `q` to `map[q]` on a register of `n_qubits`.
    pub fn relabeled(&self, n_qubits: usize, map: &[usize]) -> Result<Circuit> {
        let mut out = Circuit::new(n_qubits);
        for g in &self.gates {
            let qubits = g.qubits.iter().map(|&q| map[q]).collect();
            out.push(Gate {
                kind: g.kind.clone(),
                qubits,
            })?;
        }
        Ok(out)
    }

    /// Dense unitary obtained by running the circuit on each basis state.
    pub fn unitary(&self) -> OperatorMatrix {
        let d = 1usize << self.n_qubits;
        let mut u = OperatorMatrix::zeros(d, d);
        for col in 0..d {
            let mut amps = vec![C64::new(0.0, 0.0); d];
            amps[col] = C64::new(1.0, 0.0);
            for g in &self.gates {
                apply_gate_to_slice(&mut amps, self.n_qubits, g);
            }
            for (r, a) in amps.into_iter().enumerate() {
                u[(r, col)] = a;
            }
        }
        u
    }

    /// Applies every gate to a raw amplitude slice of matching dimension.
    pub(crate) fn apply_to_slice(&self, amps: &mut [C64]) {
        for g in &self.gates {
            apply_gate_to_slice(amps, self.n_qubits, g);
        }
    }
}

/// Returns `gate · state`.
pub fn apply_gate(state: &StateVector, gate: &Gate) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply_mut(gate)?;
    Ok(out)
}

/// Runs a circuit on a copy of `state`.
pub fn run_circuit(state: &StateVector, circuit: &Circuit) -> Result<StateVector> {
    if circuit.n_qubits() != state.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: state.n_qubits(),
            got: circuit.n_qubits(),
        });
    }
    let mut out = state.clone();
    circuit.apply_to_slice(&mut out.amps);
    Ok(out)
}

/// Shot histogram keyed by basis index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub n_qubits: usize,
    pub shots: u64,
    pub counts: BTreeMap<usize, u64>,
}

impl Histogram {
    pub fn count(&self, index: usize) -> u64 {
        self.counts.get(&index).copied().unwrap_or(0)
    }

    /// `(bitstring, count)` pairs in index order.
    pub fn labeled(&self) -> Vec<(String, u64)> {
        self.counts
            .iter()
            .map(|(&k, &v)| (bitstring(k, self.n_qubits), v))
            .collect()
    }
}

/// Shots per independent RNG stream. Fixed so results do not depend on thread count.
const SHOT_CHUNK: u64 = 1 << 14;

/// Samples computational-basis measurements of all qubits.
pub fn measure_samples(state: &StateVector, shots: u64, seed: u64) -> Result<Histogram> {
    let norm = state.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::Unnormalized { norm });
    }
    let probs = state.probabilities();
    let dist = rand::distributions::WeightedIndex::new(&probs)
        .map_err(|e| invalid("state", e.to_string()))?;
    let n_chunks = shots.div_ceil(SHOT_CHUNK);
    let chunk_counts = parallel::map_indexed(n_chunks as usize, |chunk| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk as u64);
        let len = SHOT_CHUNK.min(shots - chunk as u64 * SHOT_CHUNK);
        let mut local = BTreeMap::new();
        for _ in 0..len {
            *local.entry(dist.sample(&mut rng)).or_insert(0u64) += 1;
        }
        local
    });
    let mut counts = BTreeMap::new();
    for local in chunk_counts {
        for (k, v) in local {
            *counts.entry(k).or_insert(0) += v;
        }
    }
    Ok(Histogram {
        n_qubits: state.n_qubits(),
        shots,
        counts,
    })
}

/// Borrowed pure or mixed state.
#[derive(Debug, Clone, Copy)]
pub enum StateRef<'a> {
    Pure(&'a StateVector),
    Mixed(&'a DensityMatrix),
}

impl<'a> From<&'a StateVector> for StateRef<'a> {
    fn from(s: &'a StateVector) -> Self {
        StateRef::Pure(s)
    }
}

impl<'a> From<&'a DensityMatrix> for StateRef<'a> {
    fn from(s: &'a DensityMatrix) -> Self {
        StateRef::Mixed(s)
    }
}

/// Uhlmann fidelity; reduces to `|⟨a|b⟩|²` and `⟨ψ|ρ|ψ⟩` for pure inputs.
pub fn fidelity<'a, 'b>(a: impl Into<StateRef<'a>>, b: impl Into<StateRef<'b>>) -> Result<f64> {
    let (a, b) = (a.into(), b.into());
    let dim = |s: &StateRef| match s {
        StateRef::Pure(p) => p.dim(),
        StateRef::Mixed(m) => m.dim(),
    };
    if dim(&a) != dim(&b) {
        return Err(Error::DimensionMismatch {
            expected: dim(&a),
            got: dim(&b),
        });
    }
    Ok(match (a, b) {
        (StateRef::Pure(x), StateRef::Pure(y)) => x.inner(y).norm_sqr(),
        (StateRef::Pure(x), StateRef::Mixed(r)) | (StateRef::Mixed(r), StateRef::Pure(x)) => {
            r.expectation_pure(x.amplitudes())
        }
        (StateRef::Mixed(r), StateRef::Mixed(s)) => {
            let sr = linalg::sqrtm_psd(r.matrix());
            let inner = &sr * s.matrix() * &sr;
            let (vals, _) = hermitian_eigen(&inner);
            let t: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
            t * t
        }
    })
}

/// Bloch vector `(x, y, z)` of a single-qubit state.
pub fn bloch_vector<'a>(state: impl Into<StateRef<'a>>) -> Result<[f64; 3]> {
    let rho = match state.into() {
        StateRef::Pure(p) => DensityMatrix::from_pure(p),
        StateRef::Mixed(m) => m.clone(),
    };
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: rho.dim(),
        });
    }
    let m = rho.matrix();
    Ok([
        2.0 * m[(0, 1)].re,
        -2.0 * m[(0, 1)].im,
        (m[(0, 0)] - m[(1, 1)]).re,
    ])
}

/// Circuit preparing `(|0...0⟩ + |1...1⟩)/√2` from `|0...0⟩`.
pub fn ghz_circuit(n_qubits: usize) -> Result<Circuit> {
    if n_qubits == 0 {
        return Err(invalid("n_qubits", "must be at least 1"));
    }
    let mut circuit = Circuit::new(n_qubits);
    circuit.push(Gate::h(0))?;
    for q in 1..n_qubits {
        circuit.push(Gate::cnot(q - 1, q))?;
    }
    Ok(circuit)
}
