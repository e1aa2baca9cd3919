//! Holomorphic reproducing-kernel Hilbert spaces on monomials `z^j`.
//!
//! The raw metric is `M_jk = ∫ z̄^j z^k G dA / Ω`; the factorial-normalized metric is
//! `ρ_jk = M_jk / (j! k!)`. Ladder operators act on the orthonormal number basis built
//! from whichever metric is selected.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::C64;
use crate::quadrature::{adaptive_integrate, composite_nodes};

/// Named spaces with closed-form kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NamedSpace {
    /// `G = e^{−|z|²}` on the plane, `Ω = π`.
    SegalBargmann,
    /// `G = 1` on the unit disk, `Ω = π`.
    Bergman,
    /// Unit circle measure, `Ω = 2π`.
    Hardy,
}

impl NamedSpace {
    pub fn as_str(&self) -> &'static str {
        match self {
            NamedSpace::SegalBargmann => "segal-bargmann",
            NamedSpace::Bergman => "bergman",
            NamedSpace::Hardy => "hardy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "segal-bargmann" => Ok(NamedSpace::SegalBargmann),
            "bergman" => Ok(NamedSpace::Bergman),
            "hardy" => Ok(NamedSpace::Hardy),
            other => Err(invalid("space", format!("unknown space `{other}`"))),
        }
    }

    pub const ALL: [NamedSpace; 3] = [NamedSpace::SegalBargmann, NamedSpace::Bergman, NamedSpace::Hardy];

    /// `K_y(z)` in closed form.
    pub fn closed_form_kernel(&self, y: C64, z: C64) -> C64 {
        let x = y.conj() * z;
        let one = C64::new(1.0, 0.0);
        match self {
            NamedSpace::SegalBargmann => x.exp(),
            NamedSpace::Bergman => one / ((one - x) * (one - x)),
            NamedSpace::Hardy => one / (one - x),
        }
    }
}

/// Where the weight lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Plane,
    Disk { radius: f64 },
    /// Szegő-type boundary measure on `|z| = radius`.
    Circle { radius: f64 },
}

pub type WeightFn = Arc<dyn Fn(C64) -> f64 + Send + Sync>;

/// Weight function `G`.
#[derive(Clone)]
pub enum Weight {
    /// `G(|z|)`.
    Radial(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    General(WeightFn),
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weight::Radial(_) => write!(f, "Radial(..)"),
            Weight::General(_) => write!(f, "General(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SpaceKind {
    Named(NamedSpace),
    Custom { weight: Weight, support: Support, omega: f64 },
}

/// Which metric the number basis and ladder elements are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricConvention {
    /// `M_jk`.
    RawMoment,
    /// `ρ_jk = M_jk / (j! k!)`.
    FactorialNormalized,
}

/// Which operator raises the number index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderConvention {
    /// `W` from multiplication by `z`, `Z` from `d/dz`.
    MultiplicationRaises,
    /// The adjoint swap `W ↦ Z†`, `Z ↦ W†`.
    DerivativeRaises,
}

#[derive(Debug, Clone)]
pub struct RkhsSpace {
    pub kind: SpaceKind,
    pub max_order: usize,
    pub convention: MetricConvention,
}

/// Relative tolerance for moment quadrature and tail checks.
pub const QUADRATURE_TOL: f64 = 1e-13;
/// Off-diagonal size, relative to the diagonal, below which a metric counts as diagonal.
pub const DIAGONAL_TOL: f64 = 1e-10;

impl RkhsSpace {
    pub fn named(space: NamedSpace, max_order: usize, convention: MetricConvention) -> Self {
        Self {
            kind: SpaceKind::Named(space),
            max_order,
            convention,
        }
    }

    pub fn custom(weight: Weight, support: Support, omega: f64, max_order: usize, convention: MetricConvention) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(invalid("omega", format!("{omega} must be positive")));
        }
        match support {
            Support::Disk { radius } | Support::Circle { radius } if !(radius > 0.0) || !radius.is_finite() => {
                return Err(invalid("radius", format!("{radius} must be positive")));
            }
            _ => {}
        }
        Ok(Self {
            kind: SpaceKind::Custom { weight, support, omega },
            max_order,
            convention,
        })
    }

    pub fn with_order(&self, max_order: usize) -> Self {
        Self {
            max_order,
            ..self.clone()
        }
    }

    pub fn named_space(&self) -> Option<NamedSpace> {
        match self.kind {
            SpaceKind::Named(n) => Some(n),
            SpaceKind::Custom { .. } => None,
        }
    }

    fn support(&self) -> Support {
        match &self.kind {
            SpaceKind::Named(NamedSpace::SegalBargmann) => Support::Plane,
            SpaceKind::Named(NamedSpace::Bergman) => Support::Disk { radius: 1.0 },
            SpaceKind::Named(NamedSpace::Hardy) => Support::Circle { radius: 1.0 },
            SpaceKind::Custom { support, .. } => *support,
        }
    }

    /// Radius of the open domain of holomorphy, if bounded.
    pub fn domain_radius(&self) -> Option<f64> {
        match self.support() {
            Support::Plane => None,
            Support::Disk { radius } | Support::Circle { radius } => Some(radius),
        }
    }

    fn check_domain(&self, z: C64, name: &'static str) -> Result<()> {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::NonFinite(name));
        }
        if let Some(r) = self.domain_radius() {
            if z.norm() >= r {
                return Err(invalid(name, format!("|{name}| = {} lies outside the disk of radius {r}", z.norm())));
            }
        }
        Ok(())
    }

    fn omega(&self) -> f64 {
        match &self.kind {
            SpaceKind::Named(NamedSpace::Hardy) => 2.0 * PI,
            SpaceKind::Named(_) => PI,
            SpaceKind::Custom { omega, .. } => *omega,
        }
    }

    fn weight(&self) -> Weight {
        match &self.kind {
            SpaceKind::Named(NamedSpace::SegalBargmann) => Weight::Radial(Arc::new(|r: f64| (-r * r).exp())),
            SpaceKind::Named(_) => Weight::Radial(Arc::new(|_| 1.0)),
            SpaceKind::Custom { weight, .. } => weight.clone(),
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

type MomentCache = RwLock<HashMap<(NamedSpace, usize), Arc<DMatrix<C64>>>>;

fn moment_cache() -> &'static MomentCache {
    static CACHE: OnceLock<MomentCache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// `∫_0^∞ f` on the plane: adaptive panels of doubling length until the last one is negligible.
fn radial_integral(f: &dyn Fn(f64) -> f64, support: Support) -> Result<f64> {
    match support {
        Support::Disk { radius } => adaptive_integrate(f, 0.0, radius, QUADRATURE_TOL),
        Support::Circle { .. } => unreachable!("boundary measures have no radial integral"),
        Support::Plane => {
            let mut total = adaptive_integrate(f, 0.0, 4.0, QUADRATURE_TOL)?;
            let mut lo = 4.0;
            loop {
                let piece = adaptive_integrate(f, lo, 2.0 * lo, QUADRATURE_TOL)?;
                total += piece;
                lo *= 2.0;
                if piece.abs() <= QUADRATURE_TOL * total.abs() {
                    return Ok(total);
                }
                if lo > 1e4 {
                    return Err(Error::Quadrature(format!(
                        "tail beyond r = {lo} still contributes {piece:e} of {total:e}"
                    )));
                }
            }
        }
    }
}

fn angular_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// `∫ e^{i(k−j)θ} dθ` under the uniform `n_theta`-point rule, which is exact here.
fn angular_moment(j: usize, k: usize, n_theta: usize) -> C64 {
    if (k as i64 - j as i64).rem_euclid(n_theta as i64) == 0 {
        C64::new(2.0 * PI, 0.0)
    } else {
        C64::new(0.0, 0.0)
    }
}

fn raw_moments(space: &RkhsSpace, order: usize) -> Result<DMatrix<C64>> {
    let n = order + 1;
    let omega = space.omega();
    let support = space.support();
    let n_theta = 2 * n + 8;
    let mut m = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    match (space.weight(), support) {
        (Weight::Radial(g), Support::Circle { radius }) => {
            let gr = g(radius);
            for j in 0..n {
                for k in 0..n {
                    let ang = angular_moment(j, k, n_theta);
                    m[(j, k)] = ang * gr * radius.powi((j + k) as i32) * radius / omega;
                }
            }
        }
        (Weight::Radial(g), support) => {
            let radial: Vec<f64> = (0..2 * n - 1)
                .map(|s| radial_integral(&|r: f64| r.powi(s as i32 + 1) * g(r), support))
                .collect::<Result<_>>()?;
            for j in 0..n {
                for k in 0..n {
                    let ang = angular_moment(j, k, n_theta);
                    m[(j, k)] = ang * radial[j + k] / omega;
                }
            }
        }
        (Weight::General(g), support) => {
            let nodes = general_nodes(&g, support, n_theta)?;
            for j in 0..n {
                for k in 0..n {
                    m[(j, k)] = nodes
                        .iter()
                        .map(|(z, w)| z.conj().powu(j as u32) * z.powu(k as u32) * *w)
                        .sum::<C64>()
                        / omega;
                }
            }
        }
    }
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("metric moment"));
    }
    Ok(m)
}

/// Product rule nodes `(z, G(z) dA)` for a general weight.
fn general_nodes(g: &WeightFn, support: Support, n_theta: usize) -> Result<Vec<(C64, f64)>> {
    let thetas = angular_nodes(n_theta.max(64));
    let dth = 2.0 * PI / thetas.len() as f64;
    let radial = match support {
        Support::Circle { radius } => {
            return Ok(thetas
                .iter()
                .map(|t| {
                    let z = C64::from_polar(radius, *t);
                    (z, g(z) * radius * dth)
                })
                .collect());
        }
        Support::Disk { radius } => composite_nodes(0.0, radius, 16, 20),
        Support::Plane => {
            let nodes = composite_nodes(0.0, 16.0, 64, 20);
            let edge: f64 = thetas.iter().map(|t| g(C64::from_polar(16.0, *t))).fold(0.0, f64::max);
            if edge * 16f64.powi(42) > QUADRATURE_TOL {
                return Err(Error::Quadrature(format!(
                    "weight {edge:e} at r = 16 is too large for the plane cutoff"
                )));
            }
            nodes
        }
    };
    let mut out = Vec::with_capacity(radial.len() * thetas.len());
    for (r, wr) in radial {
        for t in &thetas {
            let z = C64::from_polar(r, *t);
            out.push((z, g(z) * r * wr * dth));
        }
    }
    Ok(out)
}

/// Metric up to order `J` under the space's convention. Named spaces are memoized.
pub fn metric_moments(space: &RkhsSpace) -> Result<DMatrix<C64>> {
    let order = space.max_order;
    let raw = match space.kind {
        SpaceKind::Named(name) => {
            let cached = moment_cache()
                .read()
                .expect("moment cache poisoned")
                .iter()
                .filter(|((n, j), _)| *n == name && *j >= order)
                .map(|(_, m)| m.clone())
                .next();
            match cached {
                Some(m) => m.view((0, 0), (order + 1, order + 1)).into_owned(),
                None => {
                    let m = raw_moments(space, order)?;
                    moment_cache()
                        .write()
                        .expect("moment cache poisoned")
                        .insert((name, order), Arc::new(m.clone()));
                    m
                }
            }
        }
        SpaceKind::Custom { .. } => raw_moments(space, order)?,
    };
    Ok(match space.convention {
        MetricConvention::RawMoment => raw,
        MetricConvention::FactorialNormalized => {
            DMatrix::from_fn(order + 1, order + 1, |j, k| raw[(j, k)] / (factorial(j) * factorial(k)))
        }
    })
}

/// `j! k!`, the factor between raw and factorial-normalized metrics.
pub fn convention_factor(j: usize, k: usize) -> f64 {
    factorial(j) * factorial(k)
}

fn is_diagonal(m: &DMatrix<C64>) -> bool {
    let n = m.nrows();
    (0..n).all(|j| {
        (0..n).all(|k| j == k || m[(j, k)].norm() <= DIAGONAL_TOL * (m[(j, j)].norm() * m[(k, k)].norm()).sqrt())
    })
}

/// Smallest eigenvalue of the Hermitian part of the metric.
pub fn metric_min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Raising `W` and lowering `Z` on the `(J+1)`-dimensional number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderPair {
    pub raising: DMatrix<C64>,
    pub lowering: DMatrix<C64>,
    pub convention: LadderConvention,
    /// True when the diagonal-metric fast path was used.
    pub diagonal: bool,
}

impl LadderPair {
    /// `max |[Z, W] − I|` over rows and columns `0..J`.
    pub fn ccr_residual(&self) -> f64 {
        let n = self.raising.nrows();
        let c = &self.lowering * &self.raising - &self.raising * &self.lowering;
        let mut worst = 0.0f64;
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((c[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// `N = W Z`.
    pub fn number_operator(&self) -> DMatrix<C64> {
        &self.raising * &self.lowering
    }
}

/// Builds the ladder pair from the metric of `space`.
///
/// Diagonal metrics give `W_{j,j−1} = (m_j/m_{j−1})^{1/2}`, `Z_{j−1,j} = j (m_j/m_{j−1})^{−1/2}`;
/// otherwise the number basis comes from a Cholesky (Gram–Schmidt) factor of the metric.
pub fn ladder_operators(space: &RkhsSpace, convention: LadderConvention) -> Result<LadderPair> {
    let m = metric_moments(space)?;
    let n = m.nrows();
    if n < 2 {
        return Err(invalid("J", "ladder operators need J ≥ 1"));
    }
    let zero = C64::new(0.0, 0.0);
    let diagonal = is_diagonal(&m);
    let (w, z) = if diagonal {
        let mut w = DMatrix::from_element(n, n, zero);
        let mut z = DMatrix::from_element(n, n, zero);
        for j in 1..n {
            let (a, b) = (m[(j, j)].re, m[(j - 1, j - 1)].re);
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::PositivityViolation { min_eigenvalue: a.min(b) });
            }
            let ratio = (a / b).sqrt();
            w[(j, j - 1)] = C64::new(ratio, 0.0);
            z[(j - 1, j)] = C64::new(j as f64 / ratio, 0.0);
        }
        (w, z)
    } else {
        let chol = nalgebra::Cholesky::new(m.clone()).ok_or(Error::PositivityViolation {
            min_eigenvalue: metric_min_eigenvalue(&m),
        })?;
        let l = chol.l();
        let lh = l.adjoint();
        let lh_inv = lh
            .clone()
            .try_inverse()
            .ok_or(Error::PositivityViolation { min_eigenvalue: 0.0 })?;
        let mut shift = DMatrix::from_element(n, n, zero);
        let mut deriv = DMatrix::from_element(n, n, zero);
        for j in 1..n {
            shift[(j, j - 1)] = C64::new(1.0, 0.0);
            deriv[(j - 1, j)] = C64::new(j as f64, 0.0);
        }
        (&lh * shift * &lh_inv, &lh * deriv * &lh_inv)
    };
    Ok(match convention {
        LadderConvention::MultiplicationRaises => LadderPair {
            raising: w,
            lowering: z,
            convention,
            diagonal,
        },
        LadderConvention::DerivativeRaises => LadderPair {
            raising: z.adjoint(),
            lowering: w.adjoint(),
            convention,
            diagonal,
        },
    })
}

/// Truncated kernel value with a bound on the omitted terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: C64,
    /// Estimated `|K − K_J|` from the ratio of the last two terms; infinite when the
    /// terms are not yet decreasing.
    pub tail_bound: f64,
}

/// `K_y(z) = Σ_{jk} z^j (M⁻¹)_{jk} ȳ^k` truncated at order `J`.
pub fn kernel_eval(space: &RkhsSpace, y: C64, z: C64) -> Result<KernelValue> {
    space.check_domain(y, "y")?;
    space.check_domain(z, "z")?;
    kernel_with_metric(&raw_metric(space)?, y, z)
}

fn raw_metric(space: &RkhsSpace) -> Result<DMatrix<C64>> {
    metric_moments(&RkhsSpace {
        convention: MetricConvention::RawMoment,
        ..space.clone()
    })
}

fn kernel_with_metric(m: &DMatrix<C64>, y: C64, z: C64) -> Result<KernelValue> {
    let n = m.nrows();
    if is_diagonal(m) {
        let x = y.conj() * z;
        let terms: Vec<C64> = (0..n).map(|j| x.powu(j as u32) / m[(j, j)].re).collect();
        let value: C64 = terms.iter().sum();
        let tail_bound = if n >= 2 {
            let (a, b) = (terms[n - 1].norm(), terms[n - 2].norm());
            let ratio = if b > 0.0 { a / b } else { 0.0 };
            if ratio < 1.0 {
                a * ratio / (1.0 - ratio)
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        return Ok(KernelValue { value, tail_bound });
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or(Error::PositivityViolation { min_eigenvalue: 0.0 })?;
    let zv = DVector::from_iterator(n, (0..n).map(|j| z.powu(j as u32)));
    let yv = DVector::from_iterator(n, (0..n).map(|k| y.conj().powu(k as u32)));
    let value = (zv.transpose() * inv * yv)[(0, 0)];
    Ok(KernelValue {
        value,
        tail_bound: f64::INFINITY,
    })
}

/// Quadrature nodes `(z, G dA / Ω)` used for inner products.
fn inner_product_nodes(space: &RkhsSpace, n_theta: usize) -> Result<Vec<(C64, f64)>> {
    let omega = space.omega();
    let support = space.support();
    let nodes = match space.weight() {
        Weight::Radial(g) => {
            let g = g.clone();
            let general: WeightFn = Arc::new(move |z: C64| g(z.norm()));
            match support {
                Support::Plane => {
                    let radial = composite_nodes(0.0, 12.0, 48, 20);
                    let thetas = angular_nodes(n_theta);
                    let dth = 2.0 * PI / n_theta as f64;
                    let mut out = Vec::new();
                    for (r, wr) in radial {
                        for t in &thetas {
                            let z = C64::from_polar(r, *t);
                            out.push((z, general(z) * r * wr * dth));
                        }
                    }
                    out
                }
                _ => general_nodes(&general, support, n_theta)?,
            }
        }
        Weight::General(g) => general_nodes(&g, support, n_theta)?,
    };
    Ok(nodes.into_iter().map(|(z, w)| (z, w / omega)).collect())
}

/// `|⟨K_y, f⟩ − f(y)|` with the inner product done by quadrature; `f = Σ c_k z^k`.
pub fn reproduce_check(space: &RkhsSpace, coefficients: &[C64], y: C64) -> Result<f64> {
    if coefficients.len() > space.max_order + 1 {
        return Err(invalid(
            "f",
            format!("degree {} exceeds J = {}", coefficients.len() - 1, space.max_order),
        ));
    }
    space.check_domain(y, "y")?;
    let nodes = inner_product_nodes(space, 4 * space.max_order + 16)?;
    let m = raw_metric(space)?;
    let f = |z: C64| coefficients.iter().rev().fold(C64::new(0.0, 0.0), |acc, c| acc * z + c);
    let mut acc = C64::new(0.0, 0.0);
    for (z, w) in &nodes {
        let k = kernel_with_metric(&m, y, *z)?;
        acc += k.value.conj() * f(*z) * *w;
    }
    Ok((acc - f(y)).norm())
}

/// Coefficients of `e^{yW}|0⟩` on the number basis, with the interior eigen-residual.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentExpansion {
    pub coefficients: Vec<C64>,
    /// `‖(Z − y)|y⟩‖` over rows `0..J`.
    pub eigen_residual: f64,
}

pub fn coherent_expand(space: &RkhsSpace, y: C64, convention: LadderConvention) -> Result<CoherentExpansion> {
    space.check_domain(y, "y")?;
    let pair = ladder_operators(space, convention)?;
    let n = pair.raising.nrows();
    let mut term = DVector::from_element(n, C64::new(0.0, 0.0));
    term[0] = C64::new(1.0, 0.0);
    let mut sum = term.clone();
    for j in 1..n {
        term = &pair.raising * term * (y / j as f64);
        sum += &term;
    }
    let residual = &pair.lowering * &sum - &sum * y;
    let eigen_residual = residual.rows(0, n - 1).norm();
    Ok(CoherentExpansion {
        coefficients: sum.iter().copied().collect(),
        eigen_residual,
    })
}

/// One row of the `(j, ρ_jj, W_{j,j−1}, Z_{j−1,j})` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub j: usize,
    pub metric: f64,
    pub raising: f64,
    pub lowering: f64,
}

pub fn rkhs_table(space: &RkhsSpace, convention: LadderConvention) -> Result<Vec<TableRow>> {
    let m = metric_moments(space)?;
    let pair = ladder_operators(space, convention)?;
    Ok((0..m.nrows())
        .map(|j| TableRow {
            j,
            metric: m[(j, j)].re,
            raising: if j > 0 { pair.raising[(j, j - 1)].re } else { 0.0 },
            lowering: if j > 0 { pair.lowering[(j - 1, j)].re } else { 0.0 },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bargmann_raw_ladder_is_standard() {
        let s = RkhsSpace::named(NamedSpace::SegalBargmann, 6, MetricConvention::RawMoment);
        let p = ladder_operators(&s, LadderConvention::MultiplicationRaises).unwrap();
        for j in 1..=6 {
            assert!((p.raising[(j, j - 1)].re - (j as f64).sqrt()).abs() < 1e-10);
            assert!((p.lowering[(j - 1, j)].re - (j as f64).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn outside_disk_rejected() {
        let s = RkhsSpace::named(NamedSpace::Hardy, 5, MetricConvention::RawMoment);
        assert!(kernel_eval(&s, C64::new(1.2, 0.0), C64::new(0.1, 0.0)).is_err());
    }
}
