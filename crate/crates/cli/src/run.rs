//! Dispatch from a validated [`RunConfig`] to the core modules.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64 as C64;
use qfes_core::koopman::{
    participation_ratio, FluxScheme, GridOperator, KvnOptions, KvnStepper, LiouvilleStepper, PeriodicGrid, Picture,
    VectorField,
};
use qfes_core::open::{apply_channel, gkls_evolve, GateNoiseProfile, LindbladModel, QuantumChannel};
use qfes_core::primitives::{amplitude_estimate, phase_estimation, qft_circuit, qft_gate_count, GroverWalk, OracleSpec, QftSwaps};
use qfes_core::rkhs::{rkhs_table, ladder_operators, LadderConvention, MetricConvention, NamedSpace, RkhsSpace};
use qfes_core::sawtooth::{
    classical_momentum_diffusion, csm_map, husimi_q, loschmidt_echo, lyapunov_exponent, momentum_eigenstate,
    quantum_momentum_diffusion, ClassicalEnsemble, EchoNoise, MomentumMetric, QsmStepper, SawtoothParams,
};
use qfes_core::state::{bitstring, ghz_circuit, measure_samples, run_circuit, DensityMatrix, StateVector};
use qfes_core::threewave::{build_subspace_hamiltonian, occupation_expectations, propagate};
use qfes_core::OperatorMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::config::{ConfigError, Kind, RunConfig};
use crate::output::{write_output, RunManifest, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Module {
        context: &'static str,
        source: qfes_core::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 2 for configuration problems, 3 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

trait Context<T> {
    fn ctx(self, context: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for qfes_core::Result<T> {
    fn ctx(self, context: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Module { context, source })
    }
}

/// Tables and an optional JSON summary produced by one experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub tables: Vec<Table>,
    pub summary: Option<serde_json::Value>,
    pub notes: Vec<String>,
}

impl Experiment {
    fn new(tables: Vec<Table>) -> Self {
        Self {
            tables,
            summary: None,
            notes: Vec::new(),
        }
    }

    fn with_summary(mut self, s: serde_json::Value) -> Self {
        self.summary = Some(s);
        self
    }
}

/// Runs the experiment without touching the file system.
pub fn execute(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let mut exp = match cfg.kind {
        Kind::Ghz => ghz(cfg)?,
        Kind::QftCheck => qft_check(cfg)?,
        Kind::Qpe => qpe(cfg)?,
        Kind::Qae => qae(cfg)?,
        Kind::Gkls => gkls(cfg)?,
        Kind::SawtoothRun => sawtooth_run(cfg)?,
        Kind::SawtoothEcho => sawtooth_echo(cfg)?,
        Kind::Threewave => threewave(cfg)?,
        Kind::EmbedKvn => embed_kvn(cfg)?,
        Kind::EmbedLiouville => embed_liouville(cfg)?,
        Kind::EmbedCarleman => embed_carleman(cfg)?,
        Kind::RkhsTable => rkhs(cfg)?,
    };
    let mut notes = cfg.notices.clone();
    notes.append(&mut exp.notes);
    exp.notes = notes;
    Ok(exp)
}

/// Runs the experiment, writes CSVs, `summary.json` and `manifest.json` into `out`.
pub fn run_to_dir(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let io = |source| CliError::Io {
        path: out.display().to_string(),
        source,
    };
    let start = Instant::now();
    let exp = execute(cfg)?;
    fs::create_dir_all(out).map_err(io)?;
    let mut outputs = Vec::new();
    for t in &exp.tables {
        outputs.push(write_output(out, &format!("{}.csv", t.name), t.to_csv().as_bytes()).map_err(io)?);
    }
    if let Some(s) = &exp.summary {
        let mut text = serde_json::to_string_pretty(s).expect("summary serializes");
        text.push('\n');
        outputs.push(write_output(out, "summary.json", text.as_bytes()).map_err(io)?);
    }
    let manifest = RunManifest {
        kind: cfg.kind.as_str().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.echo(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs,
        notes: exp.notes,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(out.join("manifest.json"), text + "\n").map_err(io)?;
    Ok(manifest)
}

fn ghz(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let n = cfg.usize("n");
    let circuit = ghz_circuit(n).ctx("building GHZ circuit")?;
    let psi = run_circuit(&StateVector::zero(n), &circuit).ctx("running GHZ circuit")?;
    let hist = measure_samples(&psi, cfg.i64("shots") as u64, cfg.seed).ctx("sampling GHZ state")?;
    let mut t = Table::new("counts", &["bitstring", "count"]);
    for (label, count) in hist.labeled() {
        t.push(vec![label.into(), count.into()]);
    }
    Ok(Experiment::new(vec![t]))
}

fn dft_matrix(dim: usize) -> OperatorMatrix {
    let s = (dim as f64).sqrt().recip();
    OperatorMatrix::from_fn(dim, dim, |j, k| {
        C64::from_polar(s, 2.0 * PI * ((j * k) % dim) as f64 / dim as f64)
    })
}

fn qft_check(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let mut t = Table::new("qft_check", &["n", "max_deviation", "gate_count", "expected_gate_count"]);
    for n in 1..=cfg.usize("n_max") {
        let c = qft_circuit(n, QftSwaps::Include).ctx("building QFT circuit")?;
        let dev = (c.unitary() - dft_matrix(1 << n)).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        t.push(vec![
            n.into(),
            dev.into(),
            c.gates().len().into(),
            qft_gate_count(n).into(),
        ]);
    }
    Ok(Experiment::new(vec![t]))
}

fn qpe(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let m = cfg.usize("m");
    let phase = cfg.f64("phase");
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let u = OperatorMatrix::from_row_slice(2, 2, &[one, zero, zero, C64::from_polar(1.0, 2.0 * PI * phase)]);
    let est = phase_estimation(&u, &[zero, one], m).ctx("phase estimation")?;
    let mut t = Table::new("qpe", &["outcome", "bits", "probability"]);
    for (y, p) in est.distribution.iter().enumerate() {
        t.push(vec![y.into(), bitstring(y, m).into(), (*p).into()]);
    }
    let estimate = est.mode as f64 / (1u64 << m) as f64;
    Ok(Experiment::new(vec![t]).with_summary(json!({
        "phase": phase,
        "mode": est.mode,
        "estimate": estimate,
        "mode_probability": est.distribution[est.mode],
    })))
}

fn qae(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let n = cfg.usize("N");
    let m = cfg.usize("m");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut marked = rand::seq::index::sample(&mut rng, n, cfg.usize("marked")).into_vec();
    marked.sort_unstable();
    let oracle = OracleSpec::from_indices(n, &marked).ctx("building oracle")?;
    let walk = GroverWalk::uniform(oracle).ctx("building Grover walk")?;
    let a = walk.good_fraction();
    let est = amplitude_estimate(&walk, m).ctx("amplitude estimation")?;
    let mut t = Table::new("qae", &["outcome", "estimate", "probability"]);
    let dim = 1usize << m;
    for (y, p) in est.phase.distribution.iter().enumerate() {
        let a_y = (PI * y as f64 / dim as f64).sin().powi(2);
        t.push(vec![y.into(), a_y.into(), (*p).into()]);
    }
    Ok(Experiment::new(vec![t]).with_summary(json!({
        "marked": marked,
        "a": a,
        "estimate": est.estimate,
        "abs_error": (est.estimate - a).abs(),
        "error_bound": est.error_bound,
        "within_bound": (est.estimate - a).abs() <= est.error_bound,
    })))
}

fn gkls(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let (relax, dephase) = (cfg.f64("relax"), cfg.f64("dephase"));
    let (t_max, dt) = (cfg.f64("t_max"), cfg.f64("dt"));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let amps = match cfg.str("initial") {
        "zero" => vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        "one" => vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        "plus-i" => vec![C64::new(s, 0.0), C64::new(0.0, s)],
        _ => vec![C64::new(s, 0.0), C64::new(s, 0.0)],
    };
    let rho0 = DensityMatrix::from_amplitudes(&amps);
    let model = LindbladModel::qubit(OperatorMatrix::zeros(2, 2), relax, 0.0, dephase).ctx("building qubit model")?;
    let steps = (t_max / dt).round() as usize;
    let mut t = Table::new(
        "gkls",
        &[
            "t",
            "rho00",
            "rho11",
            "re_rho01",
            "im_rho01",
            "trace",
            "min_eigenvalue",
            "exact_rho11",
            "exact_re_rho01",
            "exact_im_rho01",
        ],
    );
    let mut rho = rho0.clone();
    let mut worst: f64 = 0.0;
    for k in 0..=steps {
        let time = k as f64 * dt;
        if k > 0 {
            rho = gkls_evolve(&rho, &model, dt, dt).ctx("GKLS integration")?;
        }
        let exact = apply_channel(&rho0, &QuantumChannel::qubit_decoherence(relax, dephase, time).ctx("exact channel")?)
            .ctx("exact channel")?;
        let (r, e) = (rho.matrix(), exact.matrix());
        worst = worst.max((r - e).iter().fold(0.0f64, |m, z| m.max(z.norm())));
        t.push(vec![
            time.into(),
            r[(0, 0)].re.into(),
            r[(1, 1)].re.into(),
            r[(0, 1)].re.into(),
            r[(0, 1)].im.into(),
            rho.trace().re.into(),
            rho.min_eigenvalue().into(),
            e[(1, 1)].re.into(),
            e[(0, 1)].re.into(),
            e[(0, 1)].im.into(),
        ]);
    }
    Ok(Experiment::new(vec![t]).with_summary(json!({ "max_deviation_from_exact": worst })))
}

fn sawtooth_params(cfg: &RunConfig) -> Result<SawtoothParams, CliError> {
    SawtoothParams::new(cfg.f64("K"), cfg.f64("tau"), cfg.usize("n")).ctx("sawtooth parameters")
}

fn sawtooth_run(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let params = sawtooth_params(cfg)?;
    let steps = cfg.usize("steps");
    let p0 = cfg.f64("p0_over_pi") * PI;
    let m0 = params.index_for_momentum(p0);
    let psi0 = momentum_eigenstate(&params, m0);
    let quantum = quantum_momentum_diffusion(&psi0, &params, m0, steps);
    let line = ClassicalEnsemble::momentum_line(params.hbar() * m0 as f64, cfg.usize("poincare_points"), params.tau);
    let classical = classical_momentum_diffusion(&line, &params, steps, MomentumMetric::Wrapped);

    let mut moments = Table::new("momentum", &["t", "quantum_msd", "classical_msd"]);
    for (k, (q, c)) in quantum.second_moment.iter().zip(&classical.second_moment).enumerate() {
        moments.push(vec![k.into(), (*q).into(), (*c).into()]);
    }

    let stepper = QsmStepper::new(&params);
    let mut psi = psi0.amplitudes().to_vec();
    for _ in 0..steps {
        stepper.apply(&mut psi);
    }
    let final_state = StateVector::from_amplitudes(psi).ctx("final QSM state")?;
    let g = cfg.usize("husimi_grid");
    let hus = husimi_q(&final_state, &params, g, g).ctx("Husimi function")?;
    let mut husimi = Table::new("husimi", &["q", "p", "value"]);
    for (iq, q) in hus.q.iter().enumerate() {
        for (ip, p) in hus.p.iter().enumerate() {
            husimi.push(vec![(*q).into(), (*p).into(), hus.value(iq, ip).into()]);
        }
    }

    let mut poincare = Table::new("poincare", &["trajectory", "t", "q", "p"]);
    for (i, x) in line.points.iter().enumerate() {
        let (mut q, mut p) = (x[0], x[1]);
        poincare.push(vec![i.into(), 0usize.into(), q.into(), p.into()]);
        for k in 1..=steps {
            (q, p) = csm_map(q, p, &params);
            poincare.push(vec![i.into(), k.into(), q.into(), p.into()]);
        }
    }

    Ok(Experiment::new(vec![moments, husimi, poincare]).with_summary(json!({
        "hbar": params.hbar(),
        "momentum_index": m0,
        "lyapunov_exponent": lyapunov_exponent(&params),
        "quantum_diffusion": quantum.d,
        "classical_diffusion": classical.d,
        "husimi_total": hus.total(),
    })))
}

fn sawtooth_echo(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let params = sawtooth_params(cfg)?;
    let m0 = params.index_for_momentum(cfg.f64("p0_over_pi") * PI);
    let psi0 = momentum_eigenstate(&params, m0);
    let noise = match cfg.str("noise") {
        "lindblad" => EchoNoise::Lindblad(GateNoiseProfile::uniform(params.n_qubits, cfg.f64("relax"), cfg.f64("dephase"))),
        _ => EchoNoise::KickJitter { eps: cfg.f64("eps") },
    };
    let res = loschmidt_echo(&psi0, &params, &noise, cfg.usize("steps"), cfg.seed).ctx("Loschmidt echo")?;
    let mut t = Table::new("echo", &["t", "fidelity"]);
    for (k, f) in res.fidelity.iter().enumerate() {
        t.push(vec![k.into(), (*f).into()]);
    }
    let fit = res.fit.as_ref().map(|f| {
        json!({
            "regime": f.regime.as_str(),
            "rate": f.rate,
            "exponent": f.exponent,
            "quadratic": f.quadratic,
            "r2_exponential": f.r2_exponential,
            "r2_algebraic": f.r2_algebraic,
            "window": [f.window.0, f.window.1],
        })
    });
    let mut exp = Experiment::new(vec![t]).with_summary(json!({
        "fit": fit,
        "floor": 10.0 / params.dim() as f64,
        "final_fidelity": res.fidelity.last(),
    }));
    if res.fit.is_none() {
        exp.notes.push("fidelity fell below the fit floor too early; no decay fit".into());
    }
    Ok(exp)
}

fn threewave(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let g = C64::from_polar(cfg.f64("g"), cfg.f64("g_phase"));
    let h = build_subspace_hamiltonian(cfg.i64("s2"), cfg.i64("s3"), g).ctx("three-wave Hamiltonian")?;
    let d = h.subspace.dim();
    let mut psi0 = vec![C64::new(0.0, 0.0); d];
    psi0[cfg.usize("j0")] = C64::new(1.0, 0.0);
    let dt = cfg.f64("dt");
    let traj = propagate(&h, &psi0, dt, cfg.usize("steps")).ctx("three-wave propagation")?;
    let occ = occupation_expectations(&traj, &h.subspace);
    let mut t = Table::new("threewave", &["t", "n1", "n2", "n3", "n1_sq"]);
    for (k, o) in occ.iter().enumerate() {
        t.push(vec![(k as f64 * dt).into(), o.n1.into(), o.n2.into(), o.n3.into(), o.n1_sq.into()]);
    }
    Ok(Experiment::new(vec![t]).with_summary(json!({
        "dimension": d,
        "canonical_s2": h.subspace.s2,
        "canonical_s3": h.subspace.s3,
        "swapped": h.subspace.swapped,
    })))
}

fn gaussian(z: f64, z0: f64, sigma: f64) -> f64 {
    (-(z - z0).powi(2) / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma).sqrt()
}

fn embedding_setup(cfg: &RunConfig) -> Result<(PeriodicGrid, GridOperator), CliError> {
    let grid = PeriodicGrid::symmetric(1, cfg.f64("half_width"), cfg.usize("points")).ctx("grid")?;
    let field = VectorField::linear_contraction(cfg.f64("gamma"), 1).ctx("vector field")?;
    let op = GridOperator::new(&grid, &field, 0.0).ctx("grid operator")?;
    Ok((grid, op))
}

fn embed_kvn(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let (grid, op) = embedding_setup(cfg)?;
    let (z0, sigma, gamma, dt) = (cfg.f64("z0"), cfg.f64("sigma"), cfg.f64("gamma"), cfg.f64("dt"));
    let opts = KvnOptions {
        theta: cfg.theta(),
        picture: if cfg.str("picture") == "lagrangian" {
            Picture::Lagrangian
        } else {
            Picture::Eulerian
        },
        ..KvnOptions::default()
    };
    let stepper = KvnStepper::new(&op, dt, &opts).ctx("KvN stepper")?;
    let z = grid.sample(|x| x[0]);
    let h = grid.cell_volume();
    let mut psi: Vec<C64> = z.iter().map(|&x| C64::new(gaussian(x, z0, sigma).sqrt(), 0.0)).collect();
    let mut t = Table::new("kvn", &["t", "mean_z", "exact_mean_z", "norm", "participation_ratio"]);
    let mut worst: f64 = 0.0;
    for k in 0..=cfg.usize("steps") {
        if k > 0 {
            psi = stepper.step(&psi).ctx("KvN step")?;
        }
        let time = k as f64 * dt;
        let norm: f64 = psi.iter().map(|a| a.norm_sqr()).sum::<f64>() * h;
        let mean = psi.iter().zip(&z).map(|(a, x)| a.norm_sqr() * x).sum::<f64>() * h / norm;
        let exact = z0 * (-gamma * time).exp();
        worst = worst.max((mean - exact).abs());
        t.push(vec![time.into(), mean.into(), exact.into(), norm.into(), participation_ratio(&psi).into()]);
    }
    let mut fin = Table::new("kvn_final", &["z", "density"]);
    for (x, a) in z.iter().zip(&psi) {
        fin.push(vec![(*x).into(), a.norm_sqr().into()]);
    }
    Ok(Experiment::new(vec![t, fin]).with_summary(json!({
        "max_abs_error": worst,
        "max_error_relative_to_z0": if z0 != 0.0 { worst / z0.abs() } else { worst },
        "courant_number": op.courant_number(dt),
    })))
}

fn embed_liouville(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let (grid, op) = embedding_setup(cfg)?;
    let (z0, sigma, gamma, dt) = (cfg.f64("z0"), cfg.f64("sigma"), cfg.f64("gamma"), cfg.f64("dt"));
    let scheme = if cfg.str("flux") == "upwind" {
        FluxScheme::Upwind
    } else {
        FluxScheme::Central
    };
    let stepper = LiouvilleStepper::new(&op, dt, cfg.theta(), scheme).ctx("Liouville stepper")?;
    let z = grid.sample(|x| x[0]);
    let mut pdf: Vec<f64> = z.iter().map(|&x| gaussian(x, z0, sigma)).collect();
    let mut t = Table::new("liouville", &["t", "mass", "mean_z", "exact_mean_z", "min_density"]);
    let mass0 = grid.integrate(&pdf);
    let mut drift: f64 = 0.0;
    for k in 0..=cfg.usize("steps") {
        if k > 0 {
            pdf = stepper.step(&pdf).ctx("Liouville step")?;
        }
        let time = k as f64 * dt;
        let mass = grid.integrate(&pdf);
        drift = drift.max((mass - mass0).abs());
        let weighted: Vec<f64> = pdf.iter().zip(&z).map(|(p, x)| p * x).collect();
        let mean = grid.integrate(&weighted) / mass;
        let min = pdf.iter().copied().fold(f64::INFINITY, f64::min);
        t.push(vec![time.into(), mass.into(), mean.into(), (z0 * (-gamma * time).exp()).into(), min.into()]);
    }
    let mut fin = Table::new("liouville_final", &["z", "density"]);
    for (x, p) in z.iter().zip(&pdf) {
        fin.push(vec![(*x).into(), (*p).into()]);
    }
    Ok(Experiment::new(vec![t, fin]).with_summary(json!({
        "max_mass_drift": drift,
        "courant_number": op.courant_number(dt),
    })))
}

fn embed_carleman(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let dt = cfg.f64("dt");
    let (run, reference) = qfes_core::koopman::carleman_solve(
        cfg.list("coefficients"),
        cfg.f64("z0"),
        cfg.usize("order"),
        dt,
        cfg.usize("steps"),
    )
    .ctx("Carleman embedding")?;
    let mut t = Table::new("carleman", &["t", "z_carleman", "z_rk4", "abs_error", "tail"]);
    let mut worst: f64 = 0.0;
    for (k, ((zc, zr), tail)) in run.trajectory.iter().zip(&reference).zip(&run.tail).enumerate() {
        let err = (zc - zr).abs();
        worst = worst.max(err);
        t.push(vec![(k as f64 * dt).into(), (*zc).into(), (*zr).into(), err.into(), (*tail).into()]);
    }
    let mut exp = Experiment::new(vec![t]).with_summary(json!({
        "max_abs_error": worst,
        "scale": run.scale,
        "domain_exit": run.domain_exit,
    }));
    if run.domain_exit {
        exp.notes.push("scaled trajectory left the Carleman convergence disk; truncation error is uncontrolled".into());
    }
    Ok(exp)
}

fn rkhs(cfg: &RunConfig) -> Result<Experiment, CliError> {
    let spaces: Vec<NamedSpace> = match cfg.str("space") {
        "all" => NamedSpace::ALL.to_vec(),
        s => vec![NamedSpace::parse(s).ctx("space")?],
    };
    let metric = if cfg.str("convention") == "raw-moment" {
        MetricConvention::RawMoment
    } else {
        MetricConvention::FactorialNormalized
    };
    let ladder = if cfg.str("ladder") == "derivative-raises" {
        LadderConvention::DerivativeRaises
    } else {
        LadderConvention::MultiplicationRaises
    };
    let mut t = Table::new("rkhs_table", &["space", "j", "metric", "raising", "lowering"]);
    let mut ccr = serde_json::Map::new();
    for s in spaces {
        let space = RkhsSpace::named(s, cfg.usize("order"), metric);
        for row in rkhs_table(&space, ladder).ctx("RKHS table")? {
            t.push(vec![s.as_str().into(), row.j.into(), row.metric.into(), row.raising.into(), row.lowering.into()]);
        }
        let pair = ladder_operators(&space, ladder).ctx("ladder operators")?;
        ccr.insert(s.as_str().to_string(), json!(pair.ccr_residual()));
    }
    Ok(Experiment::new(vec![t]).with_summary(json!({ "ccr_residual": ccr })))
}
