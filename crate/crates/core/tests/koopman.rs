use std::f64::consts::PI;

use proptest::prelude::*;
use qfes_core::koopman::{
    analytic_density_generator, carleman_build, carleman_propagate, carleman_solve, integrable_propagate,
    participation_ratio, trajectory_oracle, van_hove_defect, AdvectionScheme, FluxScheme, GridOperator,
    IntegrableState, KoopmanStepper, KvnOptions, KvnStepper, LiouvilleStepper, PeriodicGrid, PhaseSource, Picture,
    Quadratic, VectorField,
};
use qfes_core::{Error, C64};

fn gaussian(x: f64, mu: f64, sigma: f64) -> f64 {
    (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

fn normalized(grid: &PeriodicGrid, mut pdf: Vec<f64>) -> Vec<f64> {
    let m = grid.integrate(&pdf);
    pdf.iter_mut().for_each(|p| *p /= m);
    pdf
}

fn l2_norm(psi: &[C64], h: f64) -> f64 {
    psi.iter().map(|a| a.norm_sqr()).sum::<f64>() * h
}

#[test]
fn kvn_mean_tracks_contraction() {
    let (gamma, z0, sigma, dt) = (1.0, 1.5, 0.5, 0.01);
    let grid = PeriodicGrid::symmetric(1, 4.0, 512).unwrap();
    let op = GridOperator::new(&grid, &VectorField::linear_contraction(gamma, 1).unwrap(), 0.0).unwrap();
    let stepper = KvnStepper::new(&op, dt, &KvnOptions::default()).unwrap();
    let z = grid.sample(|x| x[0]);
    let h = grid.cell_volume();
    let mut psi: Vec<C64> = z.iter().map(|&x| C64::new(gaussian(x, z0, sigma).sqrt(), 0.0)).collect();
    let n0 = l2_norm(&psi, h);
    let mut worst: f64 = 0.0;
    for k in 1..=300 {
        let prev = l2_norm(&psi, h);
        psi = stepper.step(&psi).unwrap();
        let norm = l2_norm(&psi, h);
        assert!((norm - prev).abs() < 1e-10 * n0);
        let mean = psi.iter().zip(&z).map(|(a, x)| a.norm_sqr() * x).sum::<f64>() * h / norm;
        worst = worst.max((mean - z0 * (-gamma * k as f64 * dt).exp()).abs());
    }
    assert!(worst / z0 < 1e-2, "{worst}");
}

#[test]
fn liouville_conserves_mass_and_tracks_contraction() {
    let (gamma, z0, sigma, dt) = (1.0, 1.5, 0.5, 0.01);
    let grid = PeriodicGrid::symmetric(1, 4.0, 512).unwrap();
    let op = GridOperator::new(&grid, &VectorField::linear_contraction(gamma, 1).unwrap(), 0.0).unwrap();
    let z = grid.sample(|x| x[0]);
    for scheme in [FluxScheme::Central, FluxScheme::Upwind] {
        let stepper = LiouvilleStepper::new(&op, dt, 0.5, scheme).unwrap();
        let mut pdf = normalized(&grid, z.iter().map(|&x| gaussian(x, z0, sigma)).collect());
        let mut worst: f64 = 0.0;
        for k in 1..=200 {
            let before = grid.integrate(&pdf);
            pdf = stepper.step(&pdf).unwrap();
            let mass = grid.integrate(&pdf);
            assert!((mass - before).abs() <= 1e-10, "{scheme:?}");
            let weighted: Vec<f64> = pdf.iter().zip(&z).map(|(p, x)| p * x).collect();
            let mean = grid.integrate(&weighted) / mass;
            worst = worst.max((mean - z0 * (-gamma * k as f64 * dt).exp()).abs());
        }
        assert!(worst < 0.02, "{scheme:?}: {worst}");
    }
}

#[test]
fn liouville_rotation_preserves_mass_and_l2() {
    let grid = PeriodicGrid::symmetric(2, 4.0, 64).unwrap();
    let op = GridOperator::new(&grid, &VectorField::rotation(), 0.0).unwrap();
    let steps = 400;
    let stepper = LiouvilleStepper::new(&op, 2.0 * PI / steps as f64, 0.5, FluxScheme::Central).unwrap();
    let mut pdf = normalized(&grid, grid.sample(|z| gaussian(z[0], 1.0, 0.6) * gaussian(z[1], 0.0, 0.6)));
    let (m0, l0) = (grid.integrate(&pdf), pdf.iter().map(|x| x * x).sum::<f64>());
    for _ in 0..steps {
        pdf = stepper.step(&pdf).unwrap();
    }
    let l1 = pdf.iter().map(|x| x * x).sum::<f64>();
    assert!((grid.integrate(&pdf) - m0).abs() < 1e-8);
    assert!((l1 - l0).abs() / l0 < 1e-8);
}

#[test]
fn zero_field_leaves_everything_unchanged() {
    let grid = PeriodicGrid::symmetric(1, 2.0, 64).unwrap();
    let op = GridOperator::new(&grid, &VectorField::constant(&[0.0]).unwrap(), 0.0).unwrap();
    let pdf = normalized(&grid, grid.sample(|z| gaussian(z[0], 0.2, 0.4)));
    let out = LiouvilleStepper::new(&op, 0.1, 0.5, FluxScheme::Central).unwrap().step(&pdf).unwrap();
    assert!(out.iter().zip(&pdf).all(|(a, b)| (a - b).abs() < 1e-15));
    let psi: Vec<C64> = pdf.iter().map(|p| C64::new(p.sqrt(), 0.0)).collect();
    let out = KvnStepper::new(&op, 0.1, &KvnOptions::default()).unwrap().step(&psi).unwrap();
    assert!(out.iter().zip(&psi).all(|(a, b)| (a - b).norm() < 1e-15));
}

#[test]
fn koopman_and_liouville_generators_are_adjoint() {
    let grid = PeriodicGrid::symmetric(2, 3.0, 16).unwrap();
    let field = VectorField::new(2, |_, z| vec![z[1] + 0.3 * z[0] * z[0], -z[0].sin()], |_, z| 0.6 * z[0]).unwrap();
    let op = GridOperator::new(&grid, &field, 0.0).unwrap();
    let k = op.koopman_generator();
    let l = op.liouville_generator(FluxScheme::Central);
    assert!(k.max_abs_diff(&l.transpose().scale(-1.0)) <= 1e-12);
    // Derivative is Hermitian and so is the KvN Hamiltonian.
    let d = op.derivative(0);
    assert!(d.max_abs_diff(&d.adjoint()) <= 1e-12);
    let h = op.kvn_hamiltonian(Some(&grid.sample(|z| z[0] * z[1]))).unwrap();
    assert!(h.max_abs_diff(&h.adjoint()) <= 1e-12);
}

#[test]
fn kvn_density_matches_liouville_for_divergence_free_flow() {
    let grid = PeriodicGrid::new(&[-PI], &[PI], &[4096]).unwrap();
    let op = GridOperator::new(&grid, &VectorField::constant(&[0.1]).unwrap(), 0.0).unwrap();
    let dt = 0.01;
    let mut pdf = normalized(&grid, grid.sample(|z| z[0].cos().exp()));
    let mut psi: Vec<C64> = pdf.iter().map(|p| C64::new(p.sqrt(), 0.0)).collect();
    let kvn = KvnStepper::new(&op, dt, &KvnOptions::default()).unwrap();
    let liou = LiouvilleStepper::new(&op, dt, 0.5, FluxScheme::Central).unwrap();
    for _ in 0..100 {
        psi = kvn.step(&psi).unwrap();
        pdf = liou.step(&pdf).unwrap();
    }
    let diff: Vec<f64> = psi.iter().zip(&pdf).map(|(a, p)| (a.norm_sqr() - p).abs()).collect();
    let l1 = grid.integrate(&diff);
    assert!(l1 <= 1e-6, "{l1}");
}

#[test]
fn lagrangian_picture_runs_backward() {
    let grid = PeriodicGrid::new(&[-PI], &[PI], &[256]).unwrap();
    let op = GridOperator::new(&grid, &VectorField::constant(&[0.5]).unwrap(), 0.0).unwrap();
    let psi0: Vec<C64> = grid.sample(|z| C64::new((z[0].cos()).exp(), 0.0));
    let fwd = KvnStepper::new(&op, 0.01, &KvnOptions::default()).unwrap();
    let back = KvnStepper::new(&op, 0.01, &KvnOptions { picture: Picture::Lagrangian, ..KvnOptions::default() }).unwrap();
    let round = back.step(&fwd.step(&psi0).unwrap()).unwrap();
    assert!(round.iter().zip(&psi0).all(|(a, b)| (a - b).norm() < 1e-12));
}

#[test]
fn kvh_phase_follows_lagrangian_along_orbits() {
    let h = Quadratic::new(0.5, 0.0, 0.5, 0.0, 0.0, 0.0);
    let grid = PeriodicGrid::new(&[-PI, -PI], &[PI, PI], &[256, 256]).unwrap();
    let op = GridOperator::new(&grid, &h.field(), 0.0).unwrap();
    let (steps, t) = (200, PI / 4.0);
    let opts = KvnOptions {
        phase: PhaseSource::lagrangian(move |_, z| h.lagrangian(z[0], z[1]), 1.0).unwrap(),
        ..KvnOptions::default()
    };
    let stepper = KvnStepper::new(&op, t / steps as f64, &opts).unwrap();
    let mut psi = grid.sample(|z| C64::new((-((z[0] - 1.2).powi(2) + z[1] * z[1]) / 0.64).exp(), 0.0));
    for _ in 0..steps {
        psi = stepper.step(&psi).unwrap();
    }
    let peak = psi.iter().fold(0.0f64, |m, a| m.max(a.norm()));
    let mut worst: f64 = 0.0;
    for (k, a) in psi.iter().enumerate() {
        if a.norm() < 0.5 * peak {
            continue;
        }
        let z = grid.coordinate(k);
        // Trace the point back to its initial condition under q̇ = p, ṗ = −q.
        let (q0, p0) = (z[0] * t.cos() - z[1] * t.sin(), z[0] * t.sin() + z[1] * t.cos());
        let action = (q0 * q0 - p0 * p0) * (2.0 * t).sin() / 2.0 + q0 * p0 * (1.0 - (2.0 * t).cos());
        let phi = -0.5 * action;
        worst = worst.max((a * C64::from_polar(1.0, -phi)).arg().abs());
    }
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn van_hove_defect_converges_at_second_order() {
    let a = Quadratic::new(0.5, 0.2, 0.5, 0.1, 0.0, 0.0);
    let b = Quadratic::new(0.0, 1.0, 0.3, 0.0, 0.2, 0.0);
    let defects: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| {
            let grid = PeriodicGrid::symmetric(2, 4.0, n).unwrap();
            let psi = grid.sample(|z| C64::new((-(z[0] * z[0] + z[1] * z[1])).exp(), 0.0));
            van_hove_defect(&grid, &a, &b, 1.0, &psi, 2).unwrap()
        })
        .collect();
    for w in defects.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!(slope >= 1.8, "{defects:?}");
    }
}

#[test]
fn constants_are_invariant_observables() {
    let grid = PeriodicGrid::symmetric(2, 3.0, 24).unwrap();
    let field = VectorField::new(2, |_, z| vec![z[1], -z[0] - 0.2 * z[0].powi(3)], |_, _| 0.0).unwrap();
    let op = GridOperator::new(&grid, &field, 0.0).unwrap();
    let ones = vec![1.0; grid.len()];
    for scheme in [AdvectionScheme::Theta(0.5), AdvectionScheme::Theta(1.0), AdvectionScheme::SemiLagrangian] {
        let out = KoopmanStepper::new(&op, 0.01, scheme).unwrap().step(&ones).unwrap();
        assert!(out.iter().all(|x| (x - 1.0).abs() < 1e-12), "{scheme:?}");
    }
}

#[test]
fn observable_pullback_matches_characteristics() {
    let gamma = 0.5;
    let grid = PeriodicGrid::symmetric(1, 4.0, 256).unwrap();
    let op = GridOperator::new(&grid, &VectorField::linear_contraction(gamma, 1).unwrap(), 0.0).unwrap();
    let (dt, steps) = (0.01, 50);
    let stepper = KoopmanStepper::new(&op, dt, AdvectionScheme::SemiLagrangian).unwrap();
    let mut obs = grid.sample(|z| z[0]);
    for _ in 0..steps {
        obs = stepper.step(&obs).unwrap();
    }
    // Feet of the characteristics from the time-reversed flow.
    let reversed = VectorField::linear_contraction(-gamma, 1).unwrap();
    let inner: Vec<usize> = (0..grid.len()).filter(|&k| grid.coordinate(k)[0].abs() < 2.0).collect();
    let starts: Vec<Vec<f64>> = inner.iter().map(|&k| grid.coordinate(k)).collect();
    let feet = trajectory_oracle(&reversed, &starts, dt, steps).unwrap();
    for (i, &k) in inner.iter().enumerate() {
        let foot = feet.trajectories[i][steps][0];
        assert!((obs[k] - foot).abs() < 1e-8);
        // ∂s = −V·∇s transports values backward along the contraction.
        assert!((obs[k] - grid.coordinate(k)[0] * (gamma * steps as f64 * dt).exp()).abs() < 1e-8);
    }
}

#[test]
fn observable_rotates_rigidly() {
    let n = 256;
    let grid = PeriodicGrid::symmetric(2, 4.0, n).unwrap();
    let op = GridOperator::new(&grid, &VectorField::rotation(), 0.0).unwrap();
    let steps = 100;
    let stepper = KoopmanStepper::new(&op, 2.0 * PI / steps as f64, AdvectionScheme::SemiLagrangian).unwrap();
    let init = grid.sample(|z| (-((z[0] - 1.0).powi(2) + z[1] * z[1]) / 0.5).exp());
    let mut obs = init.clone();
    for _ in 0..steps {
        obs = stepper.step(&obs).unwrap();
    }
    let dev = obs.iter().zip(&init).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(dev <= 0.05, "{dev}");
}

#[test]
fn explicit_schemes_respect_cfl() {
    let grid = PeriodicGrid::symmetric(1, 1.0, 64).unwrap();
    let op = GridOperator::new(&grid, &VectorField::constant(&[1.0]).unwrap(), 0.0).unwrap();
    let dt = 4.0 * grid.spacing(0);
    assert!(matches!(LiouvilleStepper::new(&op, dt, 0.0, FluxScheme::Upwind), Err(Error::StepTooLarge { .. })));
    assert!(matches!(KoopmanStepper::new(&op, dt, AdvectionScheme::Theta(0.0)), Err(Error::StepTooLarge { .. })));
    let explicit = KvnOptions { theta: 0.0, ..KvnOptions::default() };
    assert!(matches!(KvnStepper::new(&op, dt, &explicit), Err(Error::StepTooLarge { .. })));
    assert!(LiouvilleStepper::new(&op, dt, 0.5, FluxScheme::Central).is_ok());
}

#[test]
fn carleman_linear_case_is_exact() {
    for order in [1, 3, 8] {
        let sys = carleman_build(&[0.0, -1.0], order).unwrap();
        for k in 0..order {
            for j in 0..order {
                let expect = if k == j { -((k + 1) as f64) } else { 0.0 };
                assert_eq!(sys.generator[(k, j)], expect);
            }
        }
        let (dt, steps) = (1e-4, 10_000);
        let run = carleman_propagate(&sys, 0.5, dt, steps).unwrap();
        let exact: Vec<f64> = (0..=steps).map(|n| 0.5 * (-(n as f64) * dt).exp()).collect();
        // The truncation is exact, leaving only the Crank–Nicolson error.
        let cn: Vec<f64> = (0..=steps)
            .map(|n| 0.5 * ((1.0 - 0.5 * dt) / (1.0 + 0.5 * dt)).powi(n as i32))
            .collect();
        for n in 0..=steps {
            assert!((run.trajectory[n] - cn[n]).abs() < 1e-12);
            assert!((run.trajectory[n] - exact[n]).abs() < 1e-8);
        }
    }
    assert!(carleman_build(&[0.0, 0.0], 4).is_err());
    assert!(carleman_build(&[0.0, 1.0, -1.0], 1).is_err());
}

#[test]
fn carleman_logistic_converges_with_order() {
    let errors: Vec<f64> = [4, 8, 16]
        .iter()
        .map(|&order| {
            let (run, reference) = carleman_solve(&[0.0, 1.0, -1.0], 0.1, order, 1e-3, 2000).unwrap();
            assert!(!run.domain_exit);
            run.trajectory.iter().zip(&reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn carleman_dissipative_case() {
    let (run, reference) = carleman_solve(&[0.0, -1.0, 0.1], 0.5, 8, 1e-3, 5000).unwrap();
    let err = run.trajectory.iter().zip(&reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err <= 1e-4, "{err}");
    assert_eq!(run.scale, 1.0);
    assert_eq!(run.trajectory.len(), run.tail.len());
}

#[test]
fn carleman_rescales_large_excursions() {
    let (run, reference) = carleman_solve(&[0.0, -1.0, 0.1], 3.0, 12, 1e-3, 1000).unwrap();
    assert!((run.scale - 0.8 / 3.0).abs() < 1e-12);
    assert!((run.trajectory[0] - reference[0]).abs() < 1e-12);
    let sys = carleman_build(&[0.5, 1.0], 4).unwrap();
    assert!(carleman_propagate(&sys, 0.5, 1e-2, 100).unwrap().domain_exit);
}

/// Coefficients of `−d/dz (V(z) z^n)` as a map power → coefficient.
fn density_image(coeffs: &[f64], n: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (m, &cm) in coeffs.iter().enumerate() {
        let power = n + m;
        if power > 0 && cm != 0.0 {
            out.push((power - 1, -(power as f64) * cm));
        }
    }
    out
}

#[test]
fn density_generator_matches_hand_expansion_and_carleman() {
    for coeffs in [[0.0, 1.0, -1.0], [0.3, -1.0, 0.1], [1.0, 0.5, 2.0]] {
        for order in 2..=6 {
            let a = analytic_density_generator(&coeffs, order);
            let mut expect = nalgebra::DMatrix::<f64>::zeros(order, order);
            for col in 0..order {
                for (power, v) in density_image(&coeffs, col) {
                    if power < order {
                        expect[(power, col)] += v;
                    }
                }
            }
            assert_eq!(a, expect);
            // Same couplings as the monomial generator with the picture swapped.
            let c = carleman_build(&coeffs, order).unwrap().generator;
            for r in 0..order {
                for k in 0..order {
                    let swapped = -((r + 1) as f64) * c[(k, r)] / (k + 1) as f64;
                    assert!((a[(r, k)] - swapped).abs() < 1e-14, "{coeffs:?} N_C={order} ({r},{k})");
                }
            }
        }
    }
}

#[test]
fn integrable_flow_is_exact() {
    let state = IntegrableState {
        actions: vec![vec![0.5], vec![1.0], vec![2.0]],
        modes: vec![vec![-2], vec![0], vec![1], vec![3]],
        amplitudes: (0..12).map(|k| C64::new(1.0 + k as f64, 0.5 - k as f64) / 30.0).collect(),
    };
    let same = integrable_propagate(&state, |_| vec![0.0], 7.3).unwrap();
    assert_eq!(same, state);
    let period = integrable_propagate(&state, |_| vec![1.0], 2.0 * PI).unwrap();
    for (a, b) in period.amplitudes.iter().zip(&state.amplitudes) {
        assert!((a - b).norm() < 1e-12);
    }
    assert!(integrable_propagate(&state, |_| vec![1.0, 2.0], 1.0).is_err());
}

#[test]
fn torus_autocorrelation_matches_direct_phases() {
    let omega = [1.0, 2f64.sqrt()];
    let modes: Vec<Vec<i64>> = vec![vec![1, 0], vec![0, 1], vec![1, -1], vec![2, 1]];
    let amplitudes: Vec<C64> = [0.4, 0.3, 0.5, 0.2].iter().map(|&a| C64::new(a, 0.0)).collect();
    let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let state = IntegrableState {
        actions: vec![vec![1.0, 1.0]],
        modes: modes.clone(),
        amplitudes: amplitudes.iter().map(|a| a / norm).collect(),
    };
    let mut closest: f64 = 1.0;
    for step in 1..=400 {
        let t = 0.37 * step as f64;
        let out = integrable_propagate(&state, |_| omega.to_vec(), t).unwrap();
        let auto: C64 = state.amplitudes.iter().zip(&out.amplitudes).map(|(a, b)| a.conj() * b).sum();
        let direct: C64 = state
            .amplitudes
            .iter()
            .zip(&modes)
            .map(|(a, k)| a.norm_sqr() * C64::from_polar(1.0, -(omega[0] * k[0] as f64 + omega[1] * k[1] as f64) * t))
            .sum();
        assert!((auto - direct).norm() < 1e-10);
        closest = closest.min((auto.norm() - 1.0).abs());
    }
    assert!(closest > 1e-6);
}

#[test]
fn trajectory_oracle_periods_and_guard() {
    let steps = 6284;
    let dt = 2.0 * PI / steps as f64;
    let ens = trajectory_oracle(&VectorField::rotation(), &[vec![1.0, 0.0], vec![0.3, -0.7]], dt, steps).unwrap();
    for tr in &ens.trajectories {
        let (a, b) = (&tr[0], &tr[steps]);
        assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
    }
    let still = trajectory_oracle(&VectorField::constant(&[0.0, 0.0]).unwrap(), &[vec![0.2, 0.1]], 0.1, 10).unwrap();
    assert!(still.trajectories[0].iter().all(|z| z == &vec![0.2, 0.1]));
    let stiff = VectorField::linear_contraction(100.0, 1).unwrap();
    assert!(matches!(trajectory_oracle(&stiff, &[vec![1.0]], 0.01, 10), Err(Error::StepTooLarge { .. })));
    let (mean, se) = ens.average(0, |z| z[0]);
    assert!((mean - 0.65).abs() < 1e-15 && se > 0.0);
}

#[test]
fn participation_ratio_counts_occupied_cells() {
    let n = 40;
    let flat = vec![C64::new(1.0, 0.0); n];
    assert!((participation_ratio(&flat) - n as f64).abs() < 1e-12);
    let mut spike = vec![C64::new(0.0, 0.0); n];
    spike[3] = C64::new(0.0, 2.0);
    assert!((participation_ratio(&spike) - 1.0).abs() < 1e-12);
}

#[test]
fn polynomial_table_must_match_field() {
    let f = VectorField::new(1, |_, z| vec![z[0] - z[0] * z[0]], |_, z| 1.0 - 2.0 * z[0]).unwrap();
    assert!(f.clone().with_polynomial(&[0.0, 1.0, -1.0]).is_ok());
    assert!(f.with_polynomial(&[0.0, 1.0, 1.0]).is_err());
    assert!(VectorField::polynomial(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kvn_step_is_unitary(a in -1.0f64..1.0, b in -1.0f64..1.0, gamma in -2.0f64..2.0, dt in 0.001f64..0.05) {
        // Compressible field: unitarity holds regardless of the divergence.
        let grid = PeriodicGrid::symmetric(1, 3.0, 96).unwrap();
        let field = VectorField::new(1, move |_, z| vec![a + b * z[0].sin() - gamma * z[0]], move |_, z| b * z[0].cos() - gamma).unwrap();
        let op = GridOperator::new(&grid, &field, 0.0).unwrap();
        let opts = KvnOptions { phase: PhaseSource::lagrangian(|_, z| z[0] * z[0], 0.7).unwrap(), ..KvnOptions::default() };
        let stepper = KvnStepper::new(&op, dt, &opts).unwrap();
        let psi = grid.sample(|z| C64::new((-(z[0] - 0.3).powi(2)).exp(), 0.1 * z[0]));
        let out = stepper.step(&psi).unwrap();
        let (n0, n1) = (l2_norm(&psi, 1.0), l2_norm(&out, 1.0));
        prop_assert!((n1 - n0).abs() <= 1e-10 * n0);
    }

    #[test]
    fn liouville_mass_is_conserved(a in -1.0f64..1.0, b in -1.0f64..1.0, theta in 0.5f64..=1.0, upwind in any::<bool>()) {
        let grid = PeriodicGrid::symmetric(1, 3.0, 96).unwrap();
        let field = VectorField::new(1, move |_, z| vec![a + b * z[0].sin()], move |_, z| b * z[0].cos()).unwrap();
        let op = GridOperator::new(&grid, &field, 0.0).unwrap();
        let scheme = if upwind { FluxScheme::Upwind } else { FluxScheme::Central };
        let stepper = LiouvilleStepper::new(&op, 0.02, theta, scheme).unwrap();
        let pdf = normalized(&grid, grid.sample(|z| gaussian(z[0], 0.0, 0.7)));
        let m0 = grid.integrate(&pdf);
        let out = stepper.step(&pdf).unwrap();
        prop_assert!((grid.integrate(&out) - m0).abs() <= 1e-10);
    }

    #[test]
    fn carleman_linear_exactness(c1 in -2.0f64..0.5, z0 in -0.5f64..0.5, order in 1usize..12) {
        let sys = carleman_build(&[0.0, c1], order).unwrap();
        let reference = carleman_build(&[0.0, c1], 1).unwrap();
        let a = carleman_propagate(&sys, z0, 1e-2, 50).unwrap();
        let b = carleman_propagate(&reference, z0, 1e-2, 50).unwrap();
        prop_assert_eq!(a.trajectory, b.trajectory);
    }
}
