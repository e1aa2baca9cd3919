//! Classical and quantum sawtooth maps.
//!
//! `H = p²/2 − K q²/2 Σ_j δ(t − jτ)` on the torus `q ∈ [−π, π)`, `p ∈ [−π/τ, π/τ)`.
//! One step is a kick `p ← p + Kqτ` followed by a drift `q ← q + pτ`.
//! The quantum map uses `N = 2ⁿ` position points and `ħ = 2π/(Nτ)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::fit::{linear_fit, slope_through_origin};
use crate::linalg::C64;
use crate::open::{apply_local_channel, GateNoiseProfile, QuantumChannel};
use crate::primitives::{qft_circuit, FastQft, QftSwaps};
use crate::state::{Circuit, DensityMatrix, Gate, StateVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SawtoothParams {
    pub k: f64,
    pub tau: f64,
    pub n_qubits: usize,
}

impl SawtoothParams {
    pub fn new(k: f64, tau: f64, n_qubits: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid("tau", format!("{tau} must be positive")));
        }
        if !k.is_finite() {
            return Err(invalid("K", "must be finite"));
        }
        if n_qubits == 0 || n_qubits > 24 {
            return Err(invalid("n", format!("{n_qubits} outside 1..=24")));
        }
        Ok(Self { k, tau, n_qubits })
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// `2π/(Nτ)`.
    pub fn hbar(&self) -> f64 {
        2.0 * PI / (self.dim() as f64 * self.tau)
    }

    /// Momentum period `2π/τ`.
    pub fn p_period(&self) -> f64 {
        2.0 * PI / self.tau
    }

    /// `q_j = −π + 2πj/N`.
    pub fn position(&self, j: usize) -> f64 {
        -PI + 2.0 * PI * j as f64 / self.dim() as f64
    }

    /// Signed momentum index of FFT slot `k`, in `[−N/2, N/2)`.
    pub fn momentum_index(&self, k: usize) -> i64 {
        let n = self.dim() as i64;
        let k = k as i64;
        if k >= n / 2 {
            k - n
        } else {
            k
        }
    }

    /// Lattice index nearest to momentum `p`, after wrapping into the torus.
    pub fn index_for_momentum(&self, p: f64) -> i64 {
        let m = (wrap_p(p, self.tau) / self.hbar()).round() as i64;
        let half = self.dim() as i64 / 2;
        if m >= half {
            m - 2 * half
        } else {
            m
        }
    }

    pub fn with_k(&self, k: f64) -> Self {
        Self { k, ..*self }
    }
}

/// Wraps into `[−π, π)`.
pub fn wrap_q(q: f64) -> f64 {
    let w = (q + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Wraps into `[−π/τ, π/τ)`.
pub fn wrap_p(p: f64, tau: f64) -> f64 {
    wrap_q(p * tau) / tau
}

/// Phase-space points on the torus plus unwrapped momenta for diffusion studies.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalEnsemble {
    pub points: Vec<[f64; 2]>,
    pub unwrapped_p: Vec<f64>,
}

impl ClassicalEnsemble {
    pub fn new(points: Vec<[f64; 2]>, tau: f64) -> Self {
        let points: Vec<[f64; 2]> = points
            .into_iter()
            .map(|[q, p]| [wrap_q(q), wrap_p(p, tau)])
            .collect();
        let unwrapped_p = points.iter().map(|x| x[1]).collect();
        Self {
            points,
            unwrapped_p,
        }
    }

    /// `m` points at momentum `p0` with midpoint-spaced positions.
    pub fn momentum_line(p0: f64, m: usize, tau: f64) -> Self {
        let pts = (0..m)
            .map(|j| [-PI + 2.0 * PI * (j as f64 + 0.5) / m as f64, p0])
            .collect();
        Self::new(pts, tau)
    }

    /// `m` points uniform on the torus.
    pub fn uniform_random(m: usize, tau: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..m)
            .map(|_| {
                [
                    rng.gen_range(-PI..PI),
                    rng.gen_range(-PI / tau..PI / tau),
                ]
            })
            .collect();
        Self::new(pts, tau)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One kick-drift step of a single point, with wrapping.
pub fn csm_map(q: f64, p: f64, params: &SawtoothParams) -> (f64, f64) {
    let kick = params.k * q * params.tau;
    let p1 = wrap_p(p + kick, params.tau);
    let q1 = wrap_q(q + p1 * params.tau);
    (q1, p1)
}

/// Advances every point by one step.
pub fn csm_step(ensemble: &ClassicalEnsemble, params: &SawtoothParams) -> ClassicalEnsemble {
    let mut out = ensemble.clone();
    csm_step_mut(&mut out, params);
    out
}

pub fn csm_step_mut(ensemble: &mut ClassicalEnsemble, params: &SawtoothParams) {
    for (pt, pu) in ensemble.points.iter_mut().zip(ensemble.unwrapped_p.iter_mut()) {
        *pu += params.k * pt[0] * params.tau;
        let (q, p) = csm_map(pt[0], pt[1], params);
        *pt = [q, p];
    }
}

/// Tangent map of one kick-drift step, `[[1+Kτ², τ], [Kτ, 1]]` (unit determinant).
pub fn tangent_map(params: &SawtoothParams) -> [[f64; 2]; 2] {
    let (k, t) = (params.k, params.tau);
    [[1.0 + k * t * t, t], [k * t, 1.0]]
}

/// Lyapunov exponent per step: `ln` of the largest tangent eigenvalue modulus.
///
/// Zero whenever `|2 + Kτ²| ≤ 2`, i.e. `−4 ≤ Kτ² ≤ 0`.
pub fn lyapunov_exponent(params: &SawtoothParams) -> f64 {
    let tr = 2.0 + params.k * params.tau * params.tau;
    if tr.abs() <= 2.0 {
        0.0
    } else {
        ((tr.abs() + (tr * tr - 4.0).sqrt()) / 2.0).ln()
    }
}

/// Momentum eigenstate `ψ_j = e^{i m q_j}/√N` with lattice index `m`.
pub fn momentum_eigenstate(params: &SawtoothParams, m: i64) -> StateVector {
    let n = params.dim();
    let s = (n as f64).sqrt().recip();
    let amps = (0..n)
        .map(|j| C64::from_polar(s, m as f64 * params.position(j)))
        .collect();
    StateVector::from_amplitudes(amps).expect("normalized by construction")
}

/// Torus-periodized Gaussian profile `G_j = Σ_w exp(−(q_j − q0 + 2πw)²/(2ħ))`.
fn periodized_gaussian(params: &SawtoothParams, q0: f64) -> Vec<f64> {
    let hbar = params.hbar();
    let n = params.dim();
    let reach = (2.0 * hbar * 40.0).sqrt();
    let wmax = (reach / (2.0 * PI)).ceil() as i64 + 1;
    (0..n)
        .map(|j| {
            let x = params.position(j);
            (-wmax..=wmax)
                .map(|w| {
                    let d = x - q0 + 2.0 * PI * w as f64;
                    if d.abs() > reach {
                        0.0
                    } else {
                        (-d * d / (2.0 * hbar)).exp()
                    }
                })
                .sum()
        })
        .collect()
}

/// Coherent state of width `√(ħ/2)` centered at `(q0, p0)`, periodized on the torus.
pub fn coherent_state(params: &SawtoothParams, q0: f64, p0: f64) -> StateVector {
    let hbar = params.hbar();
    let n = params.dim();
    let reach = (2.0 * hbar * 40.0).sqrt();
    let wmax = (reach / (2.0 * PI)).ceil() as i64 + 1;
    let amps: Vec<C64> = (0..n)
        .map(|j| {
            let x = params.position(j);
            (-wmax..=wmax)
                .map(|w| {
                    let d = x - q0 + 2.0 * PI * w as f64;
                    if d.abs() > reach {
                        C64::new(0.0, 0.0)
                    } else {
                        C64::from_polar((-d * d / (2.0 * hbar)).exp(), p0 * d / hbar)
                    }
                })
                .sum()
        })
        .collect();
    StateVector::normalized(amps).expect("coherent state has nonzero norm")
}

/// Precomputed split-step propagator.
#[derive(Debug, Clone)]
pub struct QsmStepper {
    params: SawtoothParams,
    fft: FastQft,
    kick: Vec<C64>,
    kinetic: Vec<C64>,
}

impl QsmStepper {
    pub fn new(params: &SawtoothParams) -> Self {
        let n = params.dim();
        let hbar = params.hbar();
        let kick = (0..n)
            .map(|j| {
                let q = params.position(j);
                C64::from_polar(1.0, params.k * q * q * params.tau / (2.0 * hbar))
            })
            .collect();
        let kinetic = (0..n)
            .map(|k| {
                let p = hbar * params.momentum_index(k) as f64;
                C64::from_polar(1.0, -p * p * params.tau / (2.0 * hbar))
            })
            .collect();
        Self {
            params: *params,
            fft: FastQft::new(n),
            kick,
            kinetic,
        }
    }

    pub fn params(&self) -> &SawtoothParams {
        &self.params
    }

    /// Kick, `QFT†`, kinetic phase, `QFT`, in place on position amplitudes.
    pub fn apply(&self, amps: &mut [C64]) {
        amps.iter_mut().zip(&self.kick).for_each(|(a, k)| *a *= k);
        self.fft.apply_inverse(amps);
        amps.iter_mut().zip(&self.kinetic).for_each(|(a, k)| *a *= k);
        self.fft.apply(amps);
    }

    /// Exact inverse of [`QsmStepper::apply`].
    pub fn apply_inverse(&self, amps: &mut [C64]) {
        self.fft.apply_inverse(amps);
        amps.iter_mut()
            .zip(&self.kinetic)
            .for_each(|(a, k)| *a *= k.conj());
        self.fft.apply(amps);
        amps.iter_mut().zip(&self.kick).for_each(|(a, k)| *a *= k.conj());
    }

    /// Momentum-basis probabilities indexed by FFT slot.
    pub fn momentum_probabilities(&self, amps: &[C64]) -> Vec<f64> {
        let mut work = amps.to_vec();
        self.fft.apply_inverse(&mut work);
        work.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// One quantum sawtooth step.
pub fn qsm_step(state: &StateVector, params: &SawtoothParams) -> Result<StateVector> {
    if state.dim() != params.dim() {
        return Err(crate::Error::DimensionMismatch {
            expected: params.dim(),
            got: state.dim(),
        });
    }
    let mut out = state.clone();
    QsmStepper::new(params).apply(out.amplitudes_mut());
    Ok(out)
}

/// Adds `Σ_b θ_b x_b + Σ_{b<b'} θ_bb' x_b x_b'` as phase gates, where bit `b`
/// (least significant first) carries weight `s_b 2^b` of an integer `v` and the
/// applied phase is `coef · v²` minus its constant part.
fn quadratic_phase_gates(
    circuit: &mut Circuit,
    n: usize,
    coef: f64,
    linear: f64,
    signs: &[f64],
) -> Result<()> {
    let qubit = |b: usize| n - 1 - b;
    for b in 0..n {
        let w = signs[b] * 2f64.powi(b as i32);
        let theta = coef * w * w + linear * w;
        circuit.push(Gate::phase(qubit(b), theta))?;
    }
    for b in 0..n {
        for b2 in (b + 1)..n {
            let w = signs[b] * signs[b2] * 2f64.powi((b + b2) as i32);
            circuit.push(Gate::cr(qubit(b), qubit(b2), 2.0 * coef * w))?;
        }
    }
    Ok(())
}

/// Gate-level QSM step and the global phase it omits.
///
/// Both diagonal factors are quadratic in the register bits, so each becomes single-qubit
/// phases plus pairwise controlled phases.
pub fn qsm_circuit(params: &SawtoothParams) -> Result<(Circuit, f64)> {
    let n = params.n_qubits;
    let nf = params.dim() as f64;
    let hbar = params.hbar();
    let mut circuit = Circuit::new(n);
    // Kick: c q², q = −π + (2π/N) j.
    let ck = params.k * params.tau / (2.0 * hbar);
    let a = 2.0 * PI / nf;
    quadratic_phase_gates(&mut circuit, n, ck * a * a, -2.0 * PI * ck * a, &vec![1.0; n])?;
    let global = ck * PI * PI;
    circuit.extend(&qft_circuit(n, QftSwaps::Include)?.inverse())?;
    // Kinetic: −(ħτ/2) m² with m the two's-complement value of the index.
    let mut signs = vec![1.0; n];
    signs[n - 1] = -1.0;
    quadratic_phase_gates(&mut circuit, n, -hbar * params.tau / 2.0, 0.0, &signs)?;
    circuit.extend(&qft_circuit(n, QftSwaps::Include)?)?;
    Ok((circuit, global))
}

/// Husimi function sampled on `nq × np` points.
#[derive(Debug, Clone, PartialEq)]
pub struct HusimiGrid {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// Row-major, `values[iq * np + ip]`.
    pub values: Vec<f64>,
    pub dq: f64,
    pub dp: f64,
}

impl HusimiGrid {
    pub fn value(&self, iq: usize, ip: usize) -> f64 {
        self.values[iq * self.p.len() + ip]
    }

    /// `Σ Q Δq Δp`.
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dq * self.dp
    }

    /// Grid indices of the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let k = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        (k / self.p.len(), k % self.p.len())
    }

    /// Sums into `bins × bins` cells of the torus and normalizes to unit mass.
    pub fn coarse_grain(&self, bins: usize, tau: f64) -> Vec<f64> {
        let mut out = vec![0.0; bins * bins];
        for (iq, &q) in self.q.iter().enumerate() {
            let bq = torus_bin(q, PI, bins);
            for (ip, &p) in self.p.iter().enumerate() {
                let bp = torus_bin(p, PI / tau, bins);
                out[bq * bins + bp] += self.value(iq, ip);
            }
        }
        normalize(&mut out);
        out
    }
}

fn torus_bin(x: f64, half_width: f64, bins: usize) -> usize {
    let u = (x + half_width) / (2.0 * half_width);
    ((u * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// `Q(q, p) = |⟨α_{q,p}|ψ⟩|²/(2πħ)` with normalized periodized coherent states.
///
/// Position samples are `q_i = −π + 2πi/nq`; momenta `p = −π/τ + (2π/τ) k/np`. When `np`
/// divides `N` all momenta of one row come from a single FFT.
pub fn husimi_q(state: &StateVector, params: &SawtoothParams, nq: usize, np: usize) -> Result<HusimiGrid> {
    if nq < 8 || np < 8 {
        return Err(invalid("grid", format!("resolution {nq}x{np} below 8")));
    }
    let n = params.dim();
    if state.dim() != n {
        return Err(crate::Error::DimensionMismatch {
            expected: n,
            got: state.dim(),
        });
    }
    let hbar = params.hbar();
    let norm_q = 2.0 * PI * hbar;
    let qs: Vec<f64> = (0..nq).map(|i| -PI + 2.0 * PI * i as f64 / nq as f64).collect();
    let ps: Vec<f64> = (0..np)
        .map(|k| -PI / params.tau + params.p_period() * k as f64 / np as f64)
        .collect();
    let psi = state.amplitudes();
    let lattice = n % np == 0;
    let fft = FastQft::new(n);
    let rows = crate::parallel::map_indexed(nq, |iq| {
        let q0 = qs[iq];
        let g = periodized_gaussian(params, q0);
        let gn: f64 = g.iter().map(|x| x * x).sum();
        if lattice {
            // Overlap at p = ħm is e^{imq0} e^{imπ} Σ_j G_j ψ_j e^{−2πi mj/N} / ‖G‖.
            let mut work: Vec<C64> = g.iter().zip(psi).map(|(gj, a)| a * gj).collect();
            fft.apply_inverse(&mut work);
            let scale = n as f64 / gn / norm_q;
            let stride = n / np;
            (0..np)
                .map(|k| {
                    let m = -(n as i64) / 2 + (k * stride) as i64;
                    let slot = m.rem_euclid(n as i64) as usize;
                    work[slot].norm_sqr() * scale
                })
                .collect::<Vec<f64>>()
        } else {
            ps.iter()
                .map(|&p0| {
                    let alpha = coherent_state(params, q0, p0);
                    alpha.inner(state).norm_sqr() / norm_q
                })
                .collect()
        }
    });
    Ok(HusimiGrid {
        values: rows.into_iter().flatten().collect(),
        dq: 2.0 * PI / nq as f64,
        dp: params.p_period() / np as f64,
        q: qs,
        p: ps,
    })
}

/// Occupancy histogram of torus points on `bins × bins` cells, normalized.
pub fn classical_occupancy<'a>(
    points: impl IntoIterator<Item = &'a [f64; 2]>,
    tau: f64,
    bins: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; bins * bins];
    for pt in points {
        out[torus_bin(pt[0], PI, bins) * bins + torus_bin(pt[1], PI / tau, bins)] += 1.0;
    }
    normalize(&mut out);
    out
}

/// Bhattacharyya coefficient `Σ √(a_i b_i)` of two distributions.
pub fn occupancy_overlap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).sum()
}

/// Perturbation applied during the echo.
#[derive(Debug, Clone, PartialEq)]
pub enum EchoNoise {
    /// `K → K + ε_t`, `ε_t` uniform in `[−eps, eps]`.
    KickJitter { eps: f64 },
    /// Each map step is followed by per-qubit relaxation and dephasing at gate rates
    /// for the profile's two-qubit duration.
    Lindblad(GateNoiseProfile),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayRegime {
    Exponential,
    Algebraic,
    Perturbative,
}

impl DecayRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecayRegime::Exponential => "exponential",
            DecayRegime::Algebraic => "algebraic",
            DecayRegime::Perturbative => "perturbative",
        }
    }
}

/// Fits of `ln F` against `t`, `ln t` and `t²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub regime: DecayRegime,
    /// `Γ` in `F ≈ A e^{−Γt}`.
    pub rate: f64,
    /// `β` in `F ≈ A t^{−β}`.
    pub exponent: f64,
    /// `σ` in `F ≈ e^{−σt²}`.
    pub quadratic: f64,
    pub r2_exponential: f64,
    pub r2_algebraic: f64,
    /// First and last step used.
    pub window: (usize, usize),
}

/// Minimum total decay `1 − min F` below which the echo is called perturbative.
pub const PERTURBATIVE_DECAY: f64 = 0.05;

/// Classifies a fidelity series (`f[t]`, `t = 0..`), ignoring points below `floor`.
pub fn classify_decay(f: &[f64], floor: f64) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = f
        .iter()
        .enumerate()
        .skip(1)
        .take_while(|(_, &v)| v >= floor)
        .filter(|(_, &v)| v > 0.0)
        .map(|(t, &v)| (t as f64, v.min(1.0).ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let t: Vec<f64> = pts.iter().map(|x| x.0).collect();
    let lt: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    let t2: Vec<f64> = t.iter().map(|x| x * x).collect();
    let y: Vec<f64> = pts.iter().map(|x| x.1).collect();
    let exp = linear_fit(&t, &y)?;
    let alg = linear_fit(&lt, &y)?;
    let quad = slope_through_origin(&t2, &y).unwrap_or(0.0);
    let min_f = y.iter().copied().fold(0.0, f64::min).exp();
    let regime = if 1.0 - min_f < PERTURBATIVE_DECAY {
        DecayRegime::Perturbative
    } else if exp.r_squared >= alg.r_squared {
        DecayRegime::Exponential
    } else {
        DecayRegime::Algebraic
    };
    Some(DecayFit {
        regime,
        rate: -exp.slope,
        exponent: -alg.slope,
        quadratic: -quad,
        r2_exponential: exp.r_squared,
        r2_algebraic: alg.r_squared,
        window: (t[0] as usize, *t.last().unwrap() as usize),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoResult {
    /// `F(t)` for `t = 0..=T`, `F(0) = 1`.
    pub fidelity: Vec<f64>,
    pub fit: Option<DecayFit>,
}

/// Loschmidt echo: `t` perturbed forward steps then `t` independently perturbed backward
/// steps, for every `t ≤ T`.
pub fn loschmidt_echo(
    state0: &StateVector,
    params: &SawtoothParams,
    noise: &EchoNoise,
    t_max: usize,
    seed: u64,
) -> Result<EchoResult> {
    if t_max < 1 {
        return Err(invalid("T", "must be at least 1"));
    }
    if state0.dim() != params.dim() {
        return Err(crate::Error::DimensionMismatch {
            expected: params.dim(),
            got: state0.dim(),
        });
    }
    let fidelity = match noise {
        EchoNoise::KickJitter { eps } => {
            if *eps < 0.0 || !eps.is_finite() {
                return Err(invalid("eps", format!("{eps} must be non-negative")));
            }
            jitter_echo(state0, params, *eps, t_max, seed)
        }
        EchoNoise::Lindblad(profile) => lindblad_echo(state0, params, profile, t_max)?,
    };
    let floor = 10.0 / params.dim() as f64;
    Ok(EchoResult {
        fit: classify_decay(&fidelity, floor),
        fidelity,
    })
}

fn jitter_echo(state0: &StateVector, params: &SawtoothParams, eps: f64, t_max: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| if eps > 0.0 { rng.gen_range(-eps..=eps) } else { 0.0 };
    let forward: Vec<QsmStepper> = (0..t_max)
        .map(|_| QsmStepper::new(&params.with_k(params.k + draw(&mut rng))))
        .collect();
    let backward: Vec<QsmStepper> = (0..t_max)
        .map(|_| QsmStepper::new(&params.with_k(params.k + draw(&mut rng))))
        .collect();
    let psi0 = state0.amplitudes();
    let mut fwd = psi0.to_vec();
    let mut out = vec![1.0];
    for t in 1..=t_max {
        forward[t - 1].apply(&mut fwd);
        let mut back = fwd.clone();
        for s in (0..t).rev() {
            backward[s].apply_inverse(&mut back);
        }
        out.push(crate::linalg::inner(psi0, &back).norm_sqr());
    }
    out
}

fn conjugate_columns(rho: &mut nalgebra::DMatrix<C64>, f: impl Fn(&mut [C64])) {
    let d = rho.nrows();
    for _ in 0..2 {
        for col in 0..d {
            let mut v: Vec<C64> = rho.column(col).iter().copied().collect();
            f(&mut v);
            rho.set_column(col, &nalgebra::DVector::from_vec(v));
        }
        *rho = rho.adjoint();
    }
}

fn lindblad_echo(
    state0: &StateVector,
    params: &SawtoothParams,
    profile: &GateNoiseProfile,
    t_max: usize,
) -> Result<Vec<f64>> {
    let n = params.n_qubits;
    profile.validate(n)?;
    let stepper = QsmStepper::new(params);
    let channels: Vec<QuantumChannel> = (0..n)
        .map(|q| {
            let (r, p) = profile.rates(q, true);
            QuantumChannel::qubit_decoherence(r, p, profile.two_qubit_duration)
        })
        .collect::<Result<_>>()?;
    let decohere = |rho: DensityMatrix| -> Result<DensityMatrix> {
        let mut cur = rho;
        for (q, ch) in channels.iter().enumerate() {
            cur = apply_local_channel(&cur, ch, q)?;
        }
        Ok(cur)
    };
    let psi0 = state0.amplitudes();
    let mut fwd = DensityMatrix::from_pure(state0);
    let mut out = vec![1.0];
    for t in 1..=t_max {
        let mut m = fwd.into_matrix();
        conjugate_columns(&mut m, |v| stepper.apply(v));
        fwd = decohere(DensityMatrix::from_matrix_unchecked(m))?;
        let mut back = fwd.clone();
        for _ in 0..t {
            let mut m = back.into_matrix();
            conjugate_columns(&mut m, |v| stepper.apply_inverse(v));
            back = decohere(DensityMatrix::from_matrix_unchecked(m))?;
        }
        out.push(back.expectation_pure(psi0));
    }
    Ok(out)
}

/// Which momentum displacement enters `⟨(p − p0)²⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumMetric {
    /// Accumulated kicks without wrapping; never saturates.
    Unwrapped,
    /// Displacement wrapped into `[−π/τ, π/τ)`; saturates at `(π/τ)²/3`.
    Wrapped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEstimate {
    /// Half the fitted slope of the second moment.
    pub d: f64,
    /// `⟨(p − p0)²⟩` for `t = 0..=T`.
    pub second_moment: Vec<f64>,
    /// Inclusive step range used by the fit.
    pub window: (usize, usize),
    /// Fewer than five points before saturation.
    pub saturated_early: bool,
}

/// Fraction of the uniform-torus second moment where the linear window ends.
pub const SATURATION_FRACTION: f64 = 0.3;

fn fit_diffusion(moments: Vec<f64>, saturation: Option<f64>) -> DiffusionEstimate {
    let end = match saturation {
        Some(s) => moments
            .iter()
            .position(|&m| m > SATURATION_FRACTION * s)
            .map(|k| k.saturating_sub(1))
            .unwrap_or(moments.len() - 1),
        None => moments.len() - 1,
    };
    let t: Vec<f64> = (0..=end).map(|k| k as f64).collect();
    let d = linear_fit(&t, &moments[..=end])
        .map(|f| f.slope / 2.0)
        .unwrap_or(0.0);
    DiffusionEstimate {
        d,
        window: (0, end),
        saturated_early: end + 1 < 5,
        second_moment: moments,
    }
}

/// Classical momentum diffusion of an ensemble over `t_max` steps.
pub fn classical_momentum_diffusion(
    ensemble: &ClassicalEnsemble,
    params: &SawtoothParams,
    t_max: usize,
    metric: MomentumMetric,
) -> DiffusionEstimate {
    let p0_wrapped: Vec<f64> = ensemble.points.iter().map(|x| x[1]).collect();
    let p0_unwrapped = ensemble.unwrapped_p.clone();
    let m = ensemble.len().max(1) as f64;
    let moment = |e: &ClassicalEnsemble| -> f64 {
        match metric {
            MomentumMetric::Unwrapped => e
                .unwrapped_p
                .iter()
                .zip(&p0_unwrapped)
                .map(|(p, p0)| (p - p0).powi(2))
                .sum::<f64>()
                / m,
            MomentumMetric::Wrapped => e
                .points
                .iter()
                .zip(&p0_wrapped)
                .map(|(x, p0)| wrap_p(x[1] - p0, params.tau).powi(2))
                .sum::<f64>()
                / m,
        }
    };
    let mut cur = ensemble.clone();
    let mut moments = vec![moment(&cur)];
    for _ in 0..t_max {
        csm_step_mut(&mut cur, params);
        moments.push(moment(&cur));
    }
    let sat = match metric {
        MomentumMetric::Unwrapped => None,
        MomentumMetric::Wrapped => Some((PI / params.tau).powi(2) / 3.0),
    };
    fit_diffusion(moments, sat)
}

/// Quantum momentum diffusion from a momentum eigenstate with index `m0`, using the
/// wrapped displacement `p − p0` on the momentum lattice.
pub fn quantum_momentum_diffusion(state: &StateVector, params: &SawtoothParams, m0: i64, t_max: usize) -> DiffusionEstimate {
    let stepper = QsmStepper::new(params);
    let hbar = params.hbar();
    let p0 = hbar * m0 as f64;
    let moment = |amps: &[C64]| -> f64 {
        stepper
            .momentum_probabilities(amps)
            .iter()
            .enumerate()
            .map(|(k, w)| w * wrap_p(hbar * params.momentum_index(k) as f64 - p0, params.tau).powi(2))
            .sum()
    };
    let mut psi = state.amplitudes().to_vec();
    let mut moments = vec![moment(&psi)];
    for _ in 0..t_max {
        stepper.apply(&mut psi);
        moments.push(moment(&psi));
    }
    fit_diffusion(moments, Some((PI / params.tau).powi(2) / 3.0))
}
