//! Linear embeddings of nonlinear ODEs `ż = V(t, z)`.
//!
//! Densities follow `∂f = −∇·(Vf)`, observables `∂s = −V·∇s` and half-densities
//! `∂ψ = −½(V·∇ + ∇·V)ψ − iLψ/ħ`, all on a periodic uniform grid. One-dimensional
//! polynomial fields also get a Carleman embedding on the monomials `z^k`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::C64;
use crate::ode::rk4_step;
use crate::parallel::map_indexed;
use crate::sparse::{gmres, Csr, GmresOptions, Scalar};

pub type FieldFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Consistency tolerance between an evaluator and its polynomial table.
pub const POLYNOMIAL_TOL: f64 = 1e-12;

/// A velocity field with its divergence.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    velocity: FieldFn,
    divergence: ScalarFn,
    polynomial: Option<Vec<f64>>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("polynomial", &self.polynomial)
            .finish_non_exhaustive()
    }
}

impl VectorField {
    pub fn new(
        dim: usize,
        velocity: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        divergence: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        Ok(Self {
            dim,
            velocity: Arc::new(velocity),
            divergence: Arc::new(divergence),
            polynomial: None,
        })
    }

    /// `ż = Σ_m c_m z^m` in one dimension.
    pub fn polynomial(coeffs: &[f64]) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("coefficients", "polynomial is empty"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("polynomial coefficient"));
        }
        let c = coeffs.to_vec();
        let dc: Vec<f64> = c.iter().enumerate().skip(1).map(|(m, cm)| m as f64 * cm).collect();
        let cv = c.clone();
        Ok(Self {
            dim: 1,
            velocity: Arc::new(move |_, z| vec![horner(&cv, z[0])]),
            divergence: Arc::new(move |_, z| horner(&dc, z[0])),
            polynomial: Some(c),
        })
    }

    /// `V = −γz` in `dim` dimensions.
    pub fn linear_contraction(gamma: f64, dim: usize) -> Result<Self> {
        Self::new(
            dim,
            move |_, z| z.iter().map(|x| -gamma * x).collect(),
            move |_, _| -gamma * dim as f64,
        )
    }

    /// `V = (p, −q)`, period `2π`.
    pub fn rotation() -> Self {
        Self::new(2, |_, z| vec![z[1], -z[0]], |_, _| 0.0).expect("dim 2")
    }

    /// Spatially uniform velocity.
    pub fn constant(velocity: &[f64]) -> Result<Self> {
        let v = velocity.to_vec();
        Self::new(velocity.len(), move |_, _| v.clone(), |_, _| 0.0)
    }

    /// Attaches a 1-D polynomial table after checking it against the evaluator.
    pub fn with_polynomial(mut self, coeffs: &[f64]) -> Result<Self> {
        if self.dim != 1 {
            return Err(invalid("polynomial", "tables are one-dimensional"));
        }
        if coeffs.is_empty() {
            return Err(invalid("coefficients", "polynomial is empty"));
        }
        for &z in &[-0.9, -0.3, 0.0, 0.25, 0.7] {
            let direct = (self.velocity)(0.0, &[z])[0];
            let table = horner(coeffs, z);
            if (direct - table).abs() > POLYNOMIAL_TOL * (1.0 + direct.abs()) {
                return Err(invalid(
                    "polynomial",
                    format!("table gives {table} but the field gives {direct} at z = {z}"),
                ));
            }
        }
        self.polynomial = Some(coeffs.to_vec());
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn velocity(&self, t: f64, z: &[f64]) -> Vec<f64> {
        (self.velocity)(t, z)
    }

    pub fn divergence(&self, t: f64, z: &[f64]) -> f64 {
        (self.divergence)(t, z)
    }

    pub fn polynomial_coefficients(&self) -> Option<&[f64]> {
        self.polynomial.as_deref()
    }
}

fn horner(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, cm| acc * z + cm)
}

/// Uniform periodic grid on the box `[lower, upper)`, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
}

impl PeriodicGrid {
    pub fn new(lower: &[f64], upper: &[f64], points: &[usize]) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != points.len() {
            return Err(invalid("grid", "lower, upper and points must share a non-zero length"));
        }
        for a in 0..lower.len() {
            if !(upper[a] > lower[a]) || !lower[a].is_finite() || !upper[a].is_finite() {
                return Err(invalid("grid", format!("axis {a} has an empty extent")));
            }
            if points[a] < 3 {
                return Err(invalid("grid", format!("axis {a} needs at least 3 points")));
            }
        }
        Ok(Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            points: points.to_vec(),
        })
    }

    /// `[−L, L)^dim` with `n` points per axis.
    pub fn symmetric(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        Self::new(&vec![-half_width; dim], &vec![half_width; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self, axis: usize) -> usize {
        self.points[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.points[axis] as f64
    }

    pub fn extent(&self, axis: usize) -> (f64, f64) {
        (self.lower[axis], self.upper[axis])
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn axis_coordinate(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.spacing(axis)
    }

    fn stride(&self, axis: usize) -> usize {
        self.points[axis + 1..].iter().product()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        (0..self.dim())
            .map(|a| (flat / self.stride(a)) % self.points[a])
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().enumerate().map(|(a, i)| i * self.stride(a)).sum()
    }

    pub fn coordinate(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.axis_coordinate(a, i))
            .collect()
    }

    /// Flat index shifted by `offset` cells along `axis`, wrapping.
    pub fn neighbor(&self, flat: usize, axis: usize, offset: isize) -> usize {
        let n = self.points[axis] as isize;
        let stride = self.stride(axis);
        let i = ((flat / stride) % self.points[axis]) as isize;
        let j = (i + offset).rem_euclid(n) as usize;
        flat + j * stride - i as usize * stride
    }

    pub fn sample<T>(&self, f: impl Fn(&[f64]) -> T) -> Vec<T> {
        (0..self.len()).map(|k| f(&self.coordinate(k))).collect()
    }

    /// `Σ f ΔV`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.cell_volume()
    }

    /// Wraps a point into the box.
    pub fn wrap(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(a, &x)| {
                let w = self.upper[a] - self.lower[a];
                self.lower[a] + (x - self.lower[a]).rem_euclid(w)
            })
            .collect()
    }

    /// Real central difference `S ≈ ∂_axis`; `wrap = false` drops couplings across the boundary.
    pub fn difference(&self, axis: usize, wrap: bool) -> Csr<f64> {
        let h = self.spacing(axis);
        let n = self.points[axis];
        let mut t = Vec::with_capacity(2 * self.len());
        for k in 0..self.len() {
            let i = (k / self.stride(axis)) % n;
            if wrap || i + 1 < n {
                t.push((k, self.neighbor(k, axis, 1), 0.5 / h));
            }
            if wrap || i > 0 {
                t.push((k, self.neighbor(k, axis, -1), -0.5 / h));
            }
        }
        Csr::from_triplets(self.len(), self.len(), t)
    }
}

/// How the density flux is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxScheme {
    /// `−S diag(V)`: energy-neutral, dispersive.
    Central,
    /// Donor-cell fluxes at cell faces: positive but diffusive.
    Upwind,
}

/// Sign convention for the half-density equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Picture {
    /// `ψ(t, z)` at fixed final coordinates.
    Eulerian,
    /// `ψ₀(t, z₀)` at fixed initial coordinates: generator with the opposite sign.
    Lagrangian,
}

/// Discrete derivative, velocity and divergence tables of a field on a grid.
#[derive(Debug, Clone)]
pub struct GridOperator {
    grid: PeriodicGrid,
    field: VectorField,
    time: f64,
    difference: Vec<Csr<f64>>,
    velocity: Vec<Vec<f64>>,
}

impl GridOperator {
    /// Samples `field` at time `t` on `grid`.
    pub fn new(grid: &PeriodicGrid, field: &VectorField, t: f64) -> Result<Self> {
        if grid.dim() != field.dim() {
            return Err(Error::DimensionMismatch {
                expected: field.dim(),
                got: grid.dim(),
            });
        }
        let d = grid.dim();
        let samples: Vec<Vec<f64>> = map_indexed(grid.len(), |k| field.velocity(t, &grid.coordinate(k)));
        let mut velocity = vec![Vec::with_capacity(grid.len()); d];
        for v in &samples {
            if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("velocity on grid"));
            }
            for a in 0..d {
                velocity[a].push(v[a]);
            }
        }
        Ok(Self {
            grid: grid.clone(),
            field: field.clone(),
            time: t,
            difference: (0..d).map(|a| grid.difference(a, true)).collect(),
            velocity,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    /// Real antisymmetric `S ≈ ∂` along `axis`.
    pub fn difference(&self, axis: usize) -> &Csr<f64> {
        &self.difference[axis]
    }

    /// Hermitian `D = −iS`.
    pub fn derivative(&self, axis: usize) -> Csr<C64> {
        complexify(&self.difference[axis]).scale(C64::new(0.0, -1.0))
    }

    pub fn velocity(&self, axis: usize) -> &[f64] {
        &self.velocity[axis]
    }

    /// `dt Σ_a max|V_a| / h_a`.
    pub fn courant_number(&self, dt: f64) -> f64 {
        (0..self.grid.dim())
            .map(|a| {
                let vmax = self.velocity[a].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                dt * vmax / self.grid.spacing(a)
            })
            .sum()
    }

    /// Largest `dt` with Courant number 1.
    pub fn cfl_limit(&self) -> f64 {
        let c = self.courant_number(1.0);
        if c > 0.0 {
            1.0 / c
        } else {
            f64::INFINITY
        }
    }

    /// Perron-Frobenius generator `−∇·(V ·)`.
    pub fn liouville_generator(&self, scheme: FluxScheme) -> Csr<f64> {
        let n = self.grid.len();
        let mut total = Csr::from_triplets(n, n, Vec::new());
        for a in 0..self.grid.dim() {
            let part = match scheme {
                FluxScheme::Central => self.difference[a].scale_cols(&self.velocity[a]).scale(-1.0),
                FluxScheme::Upwind => self.upwind_axis(a),
            };
            total = total.combine(1.0, &part, 1.0);
        }
        total
    }

    fn upwind_axis(&self, axis: usize) -> Csr<f64> {
        let h = self.grid.spacing(axis);
        let mut t = Vec::with_capacity(4 * self.grid.len());
        for k in 0..self.grid.len() {
            let right = self.grid.neighbor(k, axis, 1);
            let mut face = self.grid.coordinate(k);
            face[axis] += 0.5 * h;
            let v = self.field.velocity(self.time, &face)[axis];
            let (vp, vm) = (v.max(0.0) / h, v.min(0.0) / h);
            // Flux through the face between k and right leaves k and enters right.
            t.push((k, k, -vp));
            t.push((k, right, -vm));
            t.push((right, k, vp));
            t.push((right, right, vm));
        }
        Csr::from_triplets(self.grid.len(), self.grid.len(), t)
    }

    /// Koopman generator `−V·∇`; the negative transpose of the central Liouville generator.
    pub fn koopman_generator(&self) -> Csr<f64> {
        let n = self.grid.len();
        let mut total = Csr::from_triplets(n, n, Vec::new());
        for a in 0..self.grid.dim() {
            let part = self.difference[a].scale_rows(&self.velocity[a]).scale(-1.0);
            total = total.combine(1.0, &part, 1.0);
        }
        total
    }

    /// `H = Σ_a (V_a D_a + D_a V_a)/2 + diag(phase)`.
    pub fn kvn_hamiltonian(&self, phase: Option<&[f64]>) -> Result<Csr<C64>> {
        let n = self.grid.len();
        let mut h = Csr::from_triplets(n, n, Vec::new());
        for a in 0..self.grid.dim() {
            let d = self.derivative(a);
            let v: Vec<C64> = self.velocity[a].iter().map(|&x| C64::new(x, 0.0)).collect();
            let sym = d.scale_rows(&v).combine(C64::new(0.5, 0.0), &d.scale_cols(&v), C64::new(0.5, 0.0));
            h = h.combine(C64::new(1.0, 0.0), &sym, C64::new(1.0, 0.0));
        }
        if let Some(l) = phase {
            if l.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: l.len() });
            }
            let diag: Vec<C64> = l.iter().map(|&x| C64::new(x, 0.0)).collect();
            h = h.combine(C64::new(1.0, 0.0), &Csr::diagonal(&diag), C64::new(1.0, 0.0));
        }
        Ok(h)
    }
}

fn complexify(a: &Csr<f64>) -> Csr<C64> {
    let t = a.triplets().into_iter().map(|(i, j, v)| (i, j, C64::new(v, 0.0))).collect();
    Csr::from_triplets(a.nrows(), a.ncols(), t)
}

/// `(I − θ dt G) x₁ = (I + (1 − θ) dt G) x₀`.
#[derive(Debug, Clone)]
pub struct ThetaStepper<T> {
    lhs: Csr<T>,
    rhs: Csr<T>,
    explicit: bool,
    options: GmresOptions,
}

impl<T: Scalar> ThetaStepper<T> {
    pub fn new(generator: &Csr<T>, dt: f64, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(invalid("theta", format!("{theta} is outside [0, 1]")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("dt", format!("{dt} must be positive")));
        }
        let id = Csr::identity(generator.nrows());
        Ok(Self {
            lhs: id.combine(T::from_f64(1.0), generator, T::from_f64(-theta * dt)),
            rhs: id.combine(T::from_f64(1.0), generator, T::from_f64((1.0 - theta) * dt)),
            explicit: theta == 0.0,
            options: GmresOptions::default(),
        })
    }

    pub fn step(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rhs.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.rhs.ncols(),
                got: x.len(),
            });
        }
        let b = self.rhs.matvec(x);
        if self.explicit {
            return Ok(b);
        }
        gmres(&self.lhs, &b, x, self.options)
    }
}

fn theta_guard(op: &GridOperator, dt: f64, theta: f64) -> Result<()> {
    if theta < 0.5 && op.courant_number(dt) > 1.0 {
        return Err(Error::StepTooLarge {
            dt,
            limit: op.cfl_limit(),
        });
    }
    Ok(())
}

/// Density stepper for `∂f = −∇·(Vf)`. Total mass `Σ f ΔV` is conserved by either flux scheme.
#[derive(Debug, Clone)]
pub struct LiouvilleStepper {
    stepper: ThetaStepper<f64>,
    cell_volume: f64,
}

/// Tolerance on `Σ f ΔV = 1` for inputs.
pub const MASS_TOL: f64 = 1e-6;

impl LiouvilleStepper {
    pub fn new(op: &GridOperator, dt: f64, theta: f64, scheme: FluxScheme) -> Result<Self> {
        theta_guard(op, dt, theta)?;
        Ok(Self {
            stepper: ThetaStepper::new(&op.liouville_generator(scheme), dt, theta)?,
            cell_volume: op.grid().cell_volume(),
        })
    }

    /// One step; `pdf` must integrate to 1.
    pub fn step(&self, pdf: &[f64]) -> Result<Vec<f64>> {
        let mass = pdf.iter().sum::<f64>() * self.cell_volume;
        if !mass.is_finite() {
            return Err(Error::NonFinite("pdf"));
        }
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Unnormalized { norm: mass });
        }
        self.stepper.step(pdf)
    }
}

/// One Liouville step. Build a [`LiouvilleStepper`] for repeated steps.
pub fn liouville_step(pdf: &[f64], op: &GridOperator, dt: f64, theta: f64, scheme: FluxScheme) -> Result<Vec<f64>> {
    LiouvilleStepper::new(op, dt, theta, scheme)?.step(pdf)
}

/// Phase source for the KvH term `L(z)/ħ`.
#[derive(Clone)]
pub enum PhaseSource {
    None,
    /// `L(t, z)` together with `ħ`.
    Lagrangian { source: ScalarFn, hbar: f64 },
}

impl fmt::Debug for PhaseSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseSource::None => write!(f, "None"),
            PhaseSource::Lagrangian { hbar, .. } => write!(f, "Lagrangian {{ hbar: {hbar} }}"),
        }
    }
}

impl PhaseSource {
    pub fn lagrangian(source: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0) || !hbar.is_finite() {
            return Err(invalid("hbar", format!("{hbar} must be positive")));
        }
        Ok(PhaseSource::Lagrangian {
            source: Arc::new(source),
            hbar,
        })
    }
}

/// Settings for [`KvnStepper`].
#[derive(Debug, Clone)]
pub struct KvnOptions {
    pub theta: f64,
    pub phase: PhaseSource,
    pub picture: Picture,
}

impl Default for KvnOptions {
    fn default() -> Self {
        Self {
            theta: 0.5,
            phase: PhaseSource::None,
            picture: Picture::Eulerian,
        }
    }
}

/// Half-density stepper for `∂ψ = −iHψ`. At `θ = ½` the step is a Cayley transform and
/// exactly unitary.
#[derive(Debug, Clone)]
pub struct KvnStepper {
    stepper: ThetaStepper<C64>,
    hamiltonian: Csr<C64>,
}

impl KvnStepper {
    pub fn new(op: &GridOperator, dt: f64, options: &KvnOptions) -> Result<Self> {
        theta_guard(op, dt, options.theta)?;
        let courant = op.courant_number(dt);
        if courant > 1.0 {
            log::warn!("KvN step has Courant number {courant:.3}; accuracy degrades above 1");
        }
        let phase = match &options.phase {
            PhaseSource::None => None,
            PhaseSource::Lagrangian { source, hbar } => {
                Some(op.grid().sample(|z| source(op.time, z) / hbar))
            }
        };
        let h = op.kvn_hamiltonian(phase.as_deref())?;
        let sign = match options.picture {
            Picture::Eulerian => -1.0,
            Picture::Lagrangian => 1.0,
        };
        let generator = h.scale(C64::new(0.0, sign));
        Ok(Self {
            stepper: ThetaStepper::new(&generator, dt, options.theta)?,
            hamiltonian: h,
        })
    }

    pub fn hamiltonian(&self) -> &Csr<C64> {
        &self.hamiltonian
    }

    pub fn step(&self, psi: &[C64]) -> Result<Vec<C64>> {
        self.stepper.step(psi)
    }
}

/// One KvN/KvH step. Build a [`KvnStepper`] for repeated steps.
pub fn kvn_step(psi: &[C64], op: &GridOperator, dt: f64, options: &KvnOptions) -> Result<Vec<C64>> {
    KvnStepper::new(op, dt, options)?.step(psi)
}

/// `(Σ|ψ|²)² / Σ|ψ|⁴`: number of grid cells the state effectively occupies.
pub fn participation_ratio(psi: &[C64]) -> f64 {
    let p2: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
    let p4: f64 = psi.iter().map(|a| a.norm_sqr().powi(2)).sum();
    if p4 > 0.0 {
        p2 * p2 / p4
    } else {
        0.0
    }
}

/// Observable advection scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdvectionScheme {
    /// θ-weighted step of the central Koopman generator.
    Theta(f64),
    /// RK4 backward characteristics with periodic cubic interpolation.
    SemiLagrangian,
}

/// Observable stepper for `∂s = −V·∇s`. Constants are invariant under both schemes.
#[derive(Debug, Clone)]
pub struct KoopmanStepper {
    kind: KoopmanKind,
}

#[derive(Debug, Clone)]
enum KoopmanKind {
    Theta(ThetaStepper<f64>),
    SemiLagrangian { grid: PeriodicGrid, feet: Vec<Vec<f64>> },
}

impl KoopmanStepper {
    pub fn new(op: &GridOperator, dt: f64, scheme: AdvectionScheme) -> Result<Self> {
        let kind = match scheme {
            AdvectionScheme::Theta(theta) => {
                theta_guard(op, dt, theta)?;
                KoopmanKind::Theta(ThetaStepper::new(&op.koopman_generator(), dt, theta)?)
            }
            AdvectionScheme::SemiLagrangian => {
                if !(dt > 0.0) || !dt.is_finite() {
                    return Err(invalid("dt", format!("{dt} must be positive")));
                }
                let grid = op.grid().clone();
                let field = op.field().clone();
                let t1 = op.time + dt;
                let f = move |t: f64, z: &[f64]| field.velocity(t, z);
                let feet = map_indexed(grid.len(), |k| {
                    let end = grid.coordinate(k);
                    rk4_step(&f, t1, &end, -dt)
                });
                if feet.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("characteristic foot"));
                }
                KoopmanKind::SemiLagrangian { grid, feet }
            }
        };
        Ok(Self { kind })
    }

    pub fn step(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("observable"));
        }
        match &self.kind {
            KoopmanKind::Theta(s) => s.step(obs),
            KoopmanKind::SemiLagrangian { grid, feet } => {
                if obs.len() != grid.len() {
                    return Err(Error::DimensionMismatch {
                        expected: grid.len(),
                        got: obs.len(),
                    });
                }
                Ok(map_indexed(grid.len(), |k| cubic_interpolate(grid, obs, &feet[k])))
            }
        }
    }
}

/// One observable step. Build a [`KoopmanStepper`] for repeated steps.
pub fn koopman_observable_step(obs: &[f64], op: &GridOperator, dt: f64, scheme: AdvectionScheme) -> Result<Vec<f64>> {
    KoopmanStepper::new(op, dt, scheme)?.step(obs)
}

/// Tensor-product 4-point Lagrange interpolation on the periodic grid.
pub fn cubic_interpolate(grid: &PeriodicGrid, values: &[f64], z: &[f64]) -> f64 {
    let d = grid.dim();
    let mut base = Vec::with_capacity(d);
    let mut weights = Vec::with_capacity(d);
    for (a, &za) in z.iter().enumerate() {
        let (lo, hi) = grid.extent(a);
        let h = grid.spacing(a);
        let x = (za - lo).rem_euclid(hi - lo) / h;
        let i = x.floor();
        let s = x - i;
        base.push(i as isize - 1);
        weights.push([
            -s * (s - 1.0) * (s - 2.0) / 6.0,
            (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
            -(s + 1.0) * s * (s - 2.0) / 2.0,
            (s + 1.0) * s * (s - 1.0) / 6.0,
        ]);
    }
    let mut acc = 0.0;
    for combo in 0..4usize.pow(d as u32) {
        let mut w = 1.0;
        let mut flat = 0;
        let mut c = combo;
        for a in (0..d).rev() {
            let o = c % 4;
            c /= 4;
            w *= weights[a][o];
            let n = grid.points(a) as isize;
            let i = (base[a] + o as isize).rem_euclid(n) as usize;
            flat += i * grid.stride(a);
        }
        acc += w * values[flat];
    }
    acc
}

/// Action-angle state: amplitude of angle Fourier mode `modes[m]` on action surface
/// `actions[j]` at `amplitudes[j * modes.len() + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrableState {
    pub actions: Vec<Vec<f64>>,
    pub modes: Vec<Vec<i64>>,
    pub amplitudes: Vec<C64>,
}

/// Exact evolution under `H = Σ ω(J)·L`: mode `k` on surface `J` gains `e^{−i ω(J)·k t}`.
pub fn integrable_propagate(
    state: &IntegrableState,
    omega: impl Fn(&[f64]) -> Vec<f64>,
    t: f64,
) -> Result<IntegrableState> {
    let nm = state.modes.len();
    if state.amplitudes.len() != state.actions.len() * nm {
        return Err(Error::DimensionMismatch {
            expected: state.actions.len() * nm,
            got: state.amplitudes.len(),
        });
    }
    let mut out = state.clone();
    for (j, action) in state.actions.iter().enumerate() {
        let w = omega(action);
        for (m, k) in state.modes.iter().enumerate() {
            if k.len() != w.len() {
                return Err(Error::DimensionMismatch {
                    expected: w.len(),
                    got: k.len(),
                });
            }
            let phase: f64 = w.iter().zip(k).map(|(wi, ki)| wi * *ki as f64).sum::<f64>() * t;
            if !phase.is_finite() {
                return Err(Error::NonFinite("integrable phase"));
            }
            out.amplitudes[j * nm + m] *= C64::from_polar(1.0, -phase);
        }
    }
    Ok(out)
}

/// RK4 trajectories of an ensemble, `trajectories[i][n]` at time `n dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub dt: f64,
    pub trajectories: Vec<Vec<Vec<f64>>>,
}

impl TrajectoryEnsemble {
    pub fn steps(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len() - 1)
    }

    /// Ensemble mean of `f` at step `n` and its standard error.
    pub fn average(&self, n: usize, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        let vals: Vec<f64> = self.trajectories.iter().map(|tr| f(&tr[n])).collect();
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        if vals.len() < 2 {
            return (mean, 0.0);
        }
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, (var / m).sqrt())
    }
}

/// Largest `dt · ‖∂V‖` accepted by [`trajectory_oracle`].
pub const RK4_STEP_GUARD: f64 = 0.5;

fn jacobian_norm(field: &VectorField, t: f64, z: &[f64]) -> f64 {
    let d = z.len();
    let mut worst = 0.0f64;
    for b in 0..d {
        let eps = 1e-6 * (1.0 + z[b].abs());
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[b] += eps;
        zm[b] -= eps;
        let vp = field.velocity(t, &zp);
        let vm = field.velocity(t, &zm);
        let col: f64 = vp.iter().zip(&vm).map(|(a, c)| ((a - c) / (2.0 * eps)).abs()).sum();
        worst = worst.max(col);
    }
    worst
}

/// Integrates every initial point for `n` RK4 steps.
pub fn trajectory_oracle(field: &VectorField, initial: &[Vec<f64>], dt: f64, n: usize) -> Result<TrajectoryEnsemble> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt", format!("{dt} must be positive")));
    }
    for z in initial {
        if z.len() != field.dim() {
            return Err(Error::DimensionMismatch {
                expected: field.dim(),
                got: z.len(),
            });
        }
        let stiffness = jacobian_norm(field, 0.0, z);
        if dt * stiffness > RK4_STEP_GUARD {
            return Err(Error::StepTooLarge {
                dt,
                limit: RK4_STEP_GUARD / stiffness,
            });
        }
    }
    let f = |t: f64, z: &[f64]| field.velocity(t, z);
    let trajectories = map_indexed(initial.len(), |i| {
        let mut tr = Vec::with_capacity(n + 1);
        tr.push(initial[i].clone());
        for s in 0..n {
            let next = rk4_step(&f, s as f64 * dt, &tr[s], dt);
            tr.push(next);
        }
        tr
    });
    if trajectories.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("trajectory"));
    }
    Ok(TrajectoryEnsemble { dt, trajectories })
}

/// Benettin estimate of the largest Lyapunov exponent per step of a map, with
/// renormalized separation `d0`.
pub fn map_lyapunov(map: impl Fn(&[f64]) -> Vec<f64>, z0: &[f64], steps: usize, d0: f64) -> Result<f64> {
    if steps == 0 || !(d0 > 0.0) {
        return Err(invalid("steps/d0", "need at least one step and a positive separation"));
    }
    let mut a = z0.to_vec();
    let mut b = z0.to_vec();
    b[0] += d0;
    let mut sum = 0.0;
    for _ in 0..steps {
        a = map(&a);
        b = map(&b);
        let diff: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let d = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NonFinite("tangent separation"));
        }
        sum += (d / d0).ln();
        b = a.iter().zip(&diff).map(|(x, dx)| x + dx * d0 / d).collect();
    }
    Ok(sum / steps as f64)
}

/// `A(q, p) = a q² + b qp + c p² + d q + e p + f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Quadratic {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        Self { a, b, c, d, e, f }
    }

    pub fn eval(&self, q: f64, p: f64) -> f64 {
        self.a * q * q + self.b * q * p + self.c * p * p + self.d * q + self.e * p + self.f
    }

    pub fn dq(&self, q: f64, p: f64) -> f64 {
        2.0 * self.a * q + self.b * p + self.d
    }

    pub fn dp(&self, q: f64, p: f64) -> f64 {
        self.b * q + 2.0 * self.c * p + self.e
    }

    /// `{A, B} = ∂_qA ∂_pB − ∂_pA ∂_qB`, again quadratic.
    pub fn poisson(&self, o: &Quadratic) -> Quadratic {
        // ∂_qA = 2a q + b p + d, ∂_pA = b q + 2c p + e.
        let (a1q, a1p, a10) = (2.0 * self.a, self.b, self.d);
        let (a2q, a2p, a20) = (self.b, 2.0 * self.c, self.e);
        let (b1q, b1p, b10) = (2.0 * o.a, o.b, o.d);
        let (b2q, b2p, b20) = (o.b, 2.0 * o.c, o.e);
        let mul = |x: (f64, f64, f64), y: (f64, f64, f64)| {
            Quadratic::new(
                x.0 * y.0,
                x.0 * y.1 + x.1 * y.0,
                x.1 * y.1,
                x.0 * y.2 + x.2 * y.0,
                x.1 * y.2 + x.2 * y.1,
                x.2 * y.2,
            )
        };
        let l = mul((a1q, a1p, a10), (b2q, b2p, b20));
        let r = mul((a2q, a2p, a20), (b1q, b1p, b10));
        Quadratic::new(l.a - r.a, l.b - r.b, l.c - r.c, l.d - r.d, l.e - r.e, l.f - r.f)
    }

    /// Hamiltonian flow `q̇ = ∂_pA`, `ṗ = −∂_qA`.
    pub fn field(&self) -> VectorField {
        let s = *self;
        VectorField::new(2, move |_, z| vec![s.dp(z[0], z[1]), -s.dq(z[0], z[1])], |_, _| 0.0).expect("dim 2")
    }

    /// Phase source `L = A − p ∂_pA`.
    pub fn lagrangian(&self, q: f64, p: f64) -> f64 {
        self.eval(q, p) - p * self.dp(q, p)
    }
}

/// Prequantum operator `(A − p∂_pA) + iħ{A, ·}` on a 2-D `(q, p)` grid with open
/// (non-wrapping) central differences.
pub fn van_hove_operator(grid: &PeriodicGrid, a: &Quadratic, hbar: f64) -> Result<Csr<C64>> {
    if grid.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: grid.dim() });
    }
    let sq = complexify(&grid.difference(0, false));
    let sp = complexify(&grid.difference(1, false));
    let coords: Vec<Vec<f64>> = (0..grid.len()).map(|k| grid.coordinate(k)).collect();
    let diag: Vec<C64> = coords.iter().map(|z| C64::new(a.lagrangian(z[0], z[1]), 0.0)).collect();
    // {A, ψ} = ∂_qA ∂_pψ − ∂_pA ∂_qψ
    let aq: Vec<C64> = coords.iter().map(|z| C64::new(0.0, hbar * a.dq(z[0], z[1]))).collect();
    let ap: Vec<C64> = coords.iter().map(|z| C64::new(0.0, -hbar * a.dp(z[0], z[1]))).collect();
    let one = C64::new(1.0, 0.0);
    Ok(Csr::diagonal(&diag)
        .combine(one, &sp.scale_rows(&aq), one)
        .combine(one, &sq.scale_rows(&ap), one))
}

/// `max |([O_A, O_B] − iħ O_{A,B}) ψ|` over grid points at least `margin` cells from the edge.
pub fn van_hove_defect(
    grid: &PeriodicGrid,
    a: &Quadratic,
    b: &Quadratic,
    hbar: f64,
    psi: &[C64],
    margin: usize,
) -> Result<f64> {
    let oa = van_hove_operator(grid, a, hbar)?;
    let ob = van_hove_operator(grid, b, hbar)?;
    let oab = van_hove_operator(grid, &a.poisson(b), hbar)?;
    let ab = oa.matvec(&ob.matvec(psi));
    let ba = ob.matvec(&oa.matvec(psi));
    let rhs = oab.matvec(psi);
    let ih = C64::new(0.0, hbar);
    let mut worst = 0.0f64;
    for k in 0..grid.len() {
        let idx = grid.multi_index(k);
        let inside = idx
            .iter()
            .enumerate()
            .all(|(ax, &i)| i >= margin && i + margin < grid.points(ax));
        if inside {
            worst = worst.max((ab[k] - ba[k] - ih * rhs[k]).norm());
        }
    }
    Ok(worst)
}

/// Truncated Carleman embedding of `ż = Σ c_m z^m` on `y_k = z^k`, `k = 1..=order`.
///
/// `ẏ_k = Σ_m k c_m y_{k+m−1}`; couplings to `k + m − 1 > order` are dropped and the
/// `m = 0, k = 1` term becomes the constant forcing `c₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanSystem {
    pub order: usize,
    pub coefficients: Vec<f64>,
    /// Row/column `k − 1` holds monomial `z^k`.
    pub generator: DMatrix<f64>,
    pub forcing: DVector<f64>,
}

pub fn carleman_build(coefficients: &[f64], order: usize) -> Result<CarlemanSystem> {
    let degree = coefficients
        .iter()
        .rposition(|c| *c != 0.0)
        .ok_or_else(|| invalid("coefficients", "polynomial is empty"))?;
    if degree < 1 {
        return Err(invalid("coefficients", "degree must be at least 1"));
    }
    if order < degree {
        return Err(invalid("N_C", format!("order {order} is below the degree {degree}")));
    }
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("polynomial coefficient"));
    }
    let mut generator = DMatrix::zeros(order, order);
    let mut forcing = DVector::zeros(order);
    for k in 1..=order {
        for (m, &cm) in coefficients.iter().enumerate() {
            if cm == 0.0 {
                continue;
            }
            let j = k + m - 1;
            if j == 0 {
                forcing[0] += cm;
            } else if j <= order {
                generator[(k - 1, j - 1)] += k as f64 * cm;
            }
        }
    }
    Ok(CarlemanSystem {
        order,
        coefficients: coefficients.to_vec(),
        generator,
        forcing,
    })
}

/// Matrix of `ψ ↦ −∂_z(Vψ)` on analytic densities `z^{ℓ−1}`, `ℓ = 1..=order`, truncated
/// to the same block. Equals `−N Cᵀ N⁻¹` with `N = diag(ℓ)`.
pub fn analytic_density_generator(coefficients: &[f64], order: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(order, order);
    for l in 1..=order {
        // z^{l−1} → −Σ_m c_m (l − 1 + m) z^{l+m−2}
        for (m, &cm) in coefficients.iter().enumerate() {
            let power = l - 1 + m;
            if power == 0 {
                continue;
            }
            let row = power; // z^{power−1} sits at ℓ = power
            if row <= order {
                a[(row - 1, l - 1)] -= power as f64 * cm;
            }
        }
    }
    a
}

/// Radius at which a Carleman trajectory is flagged as leaving the convergence disk.
pub const DOMAIN_EXIT_RADIUS: f64 = 0.95;

/// Carleman reconstruction `z(t) ≈ y₁(t)` at `t = n dt`, `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanRun {
    pub trajectory: Vec<f64>,
    /// `|y_{N_C}(t)|`.
    pub tail: Vec<f64>,
    /// Multiplier applied to `z` before embedding; `1` when unscaled.
    pub scale: f64,
    pub domain_exit: bool,
}

/// Crank–Nicolson integration of `ẏ = C y + c₀ e₁` from `y_k(0) = z0^k`.
pub fn carleman_propagate(sys: &CarlemanSystem, z0: f64, dt: f64, steps: usize) -> Result<CarlemanRun> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt", format!("{dt} must be positive")));
    }
    if !z0.is_finite() {
        return Err(Error::NonFinite("z0"));
    }
    let n = sys.order;
    let id = DMatrix::<f64>::identity(n, n);
    let lhs = &id - &sys.generator * (0.5 * dt);
    let rhs = &id + &sys.generator * (0.5 * dt);
    let lu = lhs.lu();
    let force = &sys.forcing * dt;
    let mut y = DVector::from_iterator(n, (1..=n).map(|k| z0.powi(k as i32)));
    let mut trajectory = vec![y[0]];
    let mut tail = vec![y[n - 1].abs()];
    let mut domain_exit = z0.abs() >= DOMAIN_EXIT_RADIUS;
    for _ in 0..steps {
        let b = &rhs * &y + &force;
        y = lu.solve(&b).ok_or(Error::SolverFailed {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Carleman state"));
        }
        domain_exit |= y[0].abs() >= DOMAIN_EXIT_RADIUS;
        trajectory.push(y[0]);
        tail.push(y[n - 1].abs());
    }
    Ok(CarlemanRun {
        trajectory,
        tail,
        scale: 1.0,
        domain_exit,
    })
}

/// Largest excursion kept after rescaling in [`carleman_solve`].
pub const CARLEMAN_EXCURSION: f64 = 0.8;

/// Rescales `z → s z` so the RK4 trajectory stays within [`CARLEMAN_EXCURSION`], embeds
/// at `order`, propagates and maps back. Also returns the RK4 trajectory.
pub fn carleman_solve(coefficients: &[f64], z0: f64, order: usize, dt: f64, steps: usize) -> Result<(CarlemanRun, Vec<f64>)> {
    let field = VectorField::polynomial(coefficients)?;
    let oracle = trajectory_oracle(&field, &[vec![z0]], dt, steps)?;
    let reference: Vec<f64> = oracle.trajectories[0].iter().map(|z| z[0]).collect();
    let excursion = reference.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let scale = if excursion > CARLEMAN_EXCURSION {
        CARLEMAN_EXCURSION / excursion
    } else {
        1.0
    };
    // w = s z: ẇ = Σ c_m s^{1−m} w^m
    let scaled: Vec<f64> = coefficients
        .iter()
        .enumerate()
        .map(|(m, c)| c * scale.powi(1 - m as i32))
        .collect();
    let sys = carleman_build(&scaled, order)?;
    let mut run = carleman_propagate(&sys, scale * z0, dt, steps)?;
    for z in run.trajectory.iter_mut() {
        *z /= scale;
    }
    run.scale = scale;
    Ok((run, reference))
}
