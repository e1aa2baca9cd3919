use std::f64::consts::PI;

use proptest::prelude::*;
use qfes_core::koopman::map_lyapunov;
use qfes_core::linalg::{c, inner};
use qfes_core::open::GateNoiseProfile;
use qfes_core::sawtooth::{
    classical_momentum_diffusion, classify_decay, coherent_state, csm_map, husimi_q, loschmidt_echo,
    lyapunov_exponent, momentum_eigenstate, qsm_circuit, qsm_step, quantum_momentum_diffusion, tangent_map,
    ClassicalEnsemble, DecayRegime, EchoNoise, MomentumMetric, QsmStepper, SawtoothParams,
};
use qfes_core::state::{run_circuit, StateVector};
use qfes_core::C64;

fn params(k: f64, n: usize) -> SawtoothParams {
    SawtoothParams::new(k, 1.0, n).unwrap()
}

fn random_state(n: usize, seed: u64) -> StateVector {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    StateVector::normalized((0..1 << n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
        .unwrap()
}

/// Dense kick-then-drift propagator built straight from the Hamiltonian.
fn dense_step(p: &SawtoothParams, psi: &[C64]) -> Vec<C64> {
    let n = p.dim();
    let hbar = p.hbar();
    let kicked: Vec<C64> = psi
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let q = -PI + 2.0 * PI * j as f64 / n as f64;
            a * C64::from_polar(1.0, p.k * q * q * p.tau / (2.0 * hbar))
        })
        .collect();
    (0..n)
        .map(|j| {
            let mut acc = c(0.0, 0.0);
            for m in -(n as i64) / 2..(n as i64) / 2 {
                let pm = hbar * m as f64;
                let drift = C64::from_polar(1.0, -pm * pm * p.tau / (2.0 * hbar));
                // ⟨j|m⟩⟨m|ψ⟩ with plane waves e^{i m q_j}/√N.
                let coeff: C64 = kicked
                    .iter()
                    .enumerate()
                    .map(|(l, a)| a * C64::from_polar(1.0, -(m as f64) * 2.0 * PI * l as f64 / n as f64))
                    .sum();
                acc += coeff * drift * C64::from_polar(1.0, m as f64 * 2.0 * PI * j as f64 / n as f64) / n as f64;
            }
            acc
        })
        .collect()
}

#[test]
fn stepper_matches_dense_propagator() {
    for k in [0.0, 0.3, -0.7, 2.5] {
        let p = params(k, 5);
        let psi = random_state(5, 11);
        let fast = qsm_step(&psi, &p).unwrap();
        let dense = dense_step(&p, psi.amplitudes());
        for (a, b) in fast.amplitudes().iter().zip(&dense) {
            assert!((a - b).norm() < 1e-12, "K = {k}");
        }
    }
}

#[test]
fn gate_circuit_matches_stepper() {
    for n in [3, 4, 6] {
        let p = params(0.37, n);
        let (circuit, global) = qsm_circuit(&p).unwrap();
        let psi = random_state(n, 5);
        let via_gates = run_circuit(&psi, &circuit).unwrap();
        let via_fft = qsm_step(&psi, &p).unwrap();
        let phase = C64::from_polar(1.0, global);
        for (a, b) in via_gates.amplitudes().iter().zip(via_fft.amplitudes()) {
            assert!((a * phase - b).norm() < 1e-10, "n = {n}");
        }
    }
}

#[test]
fn long_run_unitarity() {
    let p = params(0.5, 10);
    let stepper = QsmStepper::new(&p);
    let psi0 = random_state(10, 1);
    let mut psi = psi0.amplitudes().to_vec();
    for _ in 0..1000 {
        stepper.apply(&mut psi);
    }
    let norm: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
    assert!((norm - 1.0).abs() < 1e-9);
    for _ in 0..1000 {
        stepper.apply_inverse(&mut psi);
    }
    assert!((inner(psi0.amplitudes(), &psi).norm_sqr() - 1.0).abs() < 1e-9);
}

#[test]
fn free_momentum_eigenstates_are_stationary() {
    let p = params(0.0, 7);
    for m in [-64, -3, 0, 5, 63] {
        let psi0 = momentum_eigenstate(&p, m);
        let mut psi = psi0.clone();
        for _ in 0..50 {
            psi = qsm_step(&psi, &p).unwrap();
        }
        assert!((psi0.inner(&psi).norm_sqr() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn classical_map_is_area_preserving_with_known_exponent() {
    for k in [-5.0, -0.5, 0.1, 0.5, 2.0] {
        let p = params(k, 4);
        let t = tangent_map(&p);
        assert!((t[0][0] * t[1][1] - t[0][1] * t[1][0] - 1.0).abs() < 1e-14);
        let expected = if (-4.0..=0.0).contains(&k) {
            0.0
        } else {
            let tr = 2.0 + k;
            ((tr.abs() + (tr * tr - 4.0).sqrt()) / 2.0).ln()
        };
        assert!((lyapunov_exponent(&p) - expected).abs() < 1e-14);
        if expected > 0.0 {
            let map = |z: &[f64]| {
                let (q, pp) = csm_map(z[0], z[1], &p);
                vec![q, pp]
            };
            let est = map_lyapunov(map, &[0.3, 0.1], 400, 1e-10).unwrap();
            assert!((est - expected).abs() < 0.02, "K = {k}: {est} vs {expected}");
        }
    }
    assert_eq!(lyapunov_exponent(&params(0.5, 4)), 2f64.ln());
}

#[test]
fn strong_kick_diffusion_matches_random_phase_estimate() {
    let k = 2.0;
    let p = params(k, 4);
    let ens = ClassicalEnsemble::uniform_random(20_000, 1.0, 3);
    let d = classical_momentum_diffusion(&ens, &p, 50, MomentumMetric::Unwrapped);
    // Uncorrelated kicks Kq with q uniform on the circle.
    let rpa = k * k * PI * PI / 6.0;
    assert!((d.d - rpa).abs() / rpa < 0.05, "{} vs {rpa}", d.d);
}

#[test]
fn quantum_follows_classical_diffusion_at_small_k() {
    let p = params(0.15, 9);
    let m0 = p.index_for_momentum(0.75 * PI);
    let psi = momentum_eigenstate(&p, m0);
    let q = quantum_momentum_diffusion(&psi, &p, m0, 20);
    let line = ClassicalEnsemble::momentum_line(p.hbar() * m0 as f64, 4096, 1.0);
    let cl = classical_momentum_diffusion(&line, &p, 20, MomentumMetric::Wrapped);
    assert!((q.d - cl.d).abs() / cl.d < 0.1, "{} vs {}", q.d, cl.d);
}

#[test]
fn husimi_is_normalized_and_peaks_at_center() {
    let p = params(0.5, 8);
    let (q0, p0) = (0.8, -1.1);
    let alpha = coherent_state(&p, q0, p0);
    let h = husimi_q(&alpha, &p, 64, 64).unwrap();
    assert!((h.total() - 1.0).abs() < 1e-3, "{}", h.total());
    let (iq, ip) = h.argmax();
    assert!((h.q[iq] - q0).abs() <= h.dq);
    assert!((h.p[ip] - p0).abs() <= h.dp);
    // Off-lattice momenta take the direct overlap path.
    let off = husimi_q(&alpha, &p, 24, 24).unwrap();
    assert!((off.total() - 1.0).abs() < 1e-2);
}

#[test]
fn echo_without_perturbation_is_perfect() {
    let p = params(0.5, 6);
    let psi = momentum_eigenstate(&p, 10);
    let r = loschmidt_echo(&psi, &p, &EchoNoise::KickJitter { eps: 0.0 }, 20, 0).unwrap();
    assert!(r.fidelity.iter().all(|f| (f - 1.0).abs() < 1e-10));
    let quiet = GateNoiseProfile::uniform(6, 0.0, 0.0);
    let r = loschmidt_echo(&psi, &p, &EchoNoise::Lindblad(quiet), 5, 0).unwrap();
    assert!(r.fidelity.iter().all(|f| (f - 1.0).abs() < 1e-10));
}

#[test]
fn echo_is_seed_deterministic_and_decays_under_noise() {
    let p = params(0.5, 7);
    let psi = momentum_eigenstate(&p, 40);
    let noise = EchoNoise::KickJitter { eps: 5e-3 };
    let a = loschmidt_echo(&psi, &p, &noise, 30, 9).unwrap();
    let b = loschmidt_echo(&psi, &p, &noise, 30, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.fidelity[30] < a.fidelity[1]);
    let lind = EchoNoise::Lindblad(GateNoiseProfile::uniform(4, 0.01, 0.01));
    let p4 = params(0.5, 4);
    let r = loschmidt_echo(&momentum_eigenstate(&p4, 3), &p4, &lind, 10, 0).unwrap();
    assert!(r.fidelity.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn decay_classifier_on_synthetic_series() {
    let exp: Vec<f64> = (0..80).map(|t| (-0.05 * t as f64).exp()).collect();
    let fit = classify_decay(&exp, 0.01).unwrap();
    assert_eq!(fit.regime, DecayRegime::Exponential);
    assert!((fit.rate - 0.05).abs() < 1e-10);
    let alg: Vec<f64> = (0..80).map(|t| (1.0 + t as f64).powf(-1.5)).collect();
    assert_eq!(classify_decay(&alg, 0.001).unwrap().regime, DecayRegime::Algebraic);
    let flat: Vec<f64> = (0..80).map(|t| 1.0 - 1e-4 * t as f64).collect();
    assert_eq!(classify_decay(&flat, 0.01).unwrap().regime, DecayRegime::Perturbative);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn step_is_unitary_and_invertible(k in -3.0f64..3.0, tau in 0.2f64..2.0, n in 2usize..8, seed in any::<u64>()) {
        let p = SawtoothParams::new(k, tau, n).unwrap();
        let psi0 = random_state(n, seed);
        let s = QsmStepper::new(&p);
        let mut psi = psi0.amplitudes().to_vec();
        s.apply(&mut psi);
        let norm: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        s.apply_inverse(&mut psi);
        for (a, b) in psi.iter().zip(psi0.amplitudes()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn classical_map_stays_on_torus(k in -3.0f64..3.0, tau in 0.2f64..2.0, q in -PI..PI, pp in -10.0f64..10.0) {
        let p = SawtoothParams::new(k, tau, 3).unwrap();
        let (q1, p1) = csm_map(q, pp, &p);
        prop_assert!((-PI..PI).contains(&q1));
        prop_assert!((-PI / tau..PI / tau).contains(&p1));
    }
}
