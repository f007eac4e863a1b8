//! Unnormalized exponential families `q(x; ζ, β) = exp[ζᵀc(x) + β]`.
//!
//! [`extend_family`] builds the augmented statistics `[h, h², c₁, …, c_m]`
//! that host the finite-dimensional filter, [`make_integrable`] appends a
//! confining `|x|^s` term, and the remaining functions evaluate, integrate and
//! tabulate family members.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr, PowerTerms};
use crate::quad::{self, GaussLegendre};

/// Gram-matrix eigenvalue below which the statistics count as dependent.
pub const INDEPENDENCE_THRESHOLD: f64 = 1e-10;
/// Half-width of the interval the independence test integrates over.
pub const DEFAULT_GRAM_HALF_WIDTH: f64 = 3.0;
const GRAM_NODES: usize = 64;
/// Relative size below which cancelling leading coefficients are inconclusive.
const CANCELLATION_TOLERANCE: f64 = 1e-14;
/// Minimum node count of a [`DensityGrid`].
pub const MIN_GRID_NODES: usize = 64;

/// Where a statistic came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatOrigin {
    /// `c•₁ = h`.
    Observation,
    /// `c•₂ = h²`.
    ObservationSquared,
    /// A user-supplied `c_i`.
    Supplied,
    /// The `|x|^s` term appended by [`make_integrable`].
    Integrability,
}

#[derive(Debug, Clone)]
pub struct Statistic {
    pub expr: Expr,
    pub origin: StatOrigin,
    compiled: CompiledExpr,
}

impl Statistic {
    fn new(expr: Expr, origin: StatOrigin) -> Self {
        let compiled = expr.compile();
        Statistic { expr, origin, compiled }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.compiled.eval(x, 0.0)
    }
}

/// Ordered sufficient statistics `c• = [h, h², c₁, …]`.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    stats: Vec<Statistic>,
}

impl SufficientStats {
    /// Wrap raw statistics without the independence test. Mostly useful for
    /// families that do not come from an observation function.
    pub fn from_exprs(exprs: Vec<(Expr, StatOrigin)>) -> Result<Self> {
        for (index, (e, _)) in exprs.iter().enumerate() {
            if e.depends_on_t() {
                return Err(Error::TimeDependentStatistic { index });
            }
        }
        Ok(SufficientStats {
            stats: exprs.into_iter().map(|(e, o)| Statistic::new(e, o)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Statistic> {
        self.stats.iter()
    }

    pub fn get(&self, i: usize) -> &Statistic {
        &self.stats[i]
    }

    pub fn exprs(&self) -> Vec<Expr> {
        self.stats.iter().map(|s| s.expr.clone()).collect()
    }

    /// `ζᵀc(x)`.
    #[inline]
    pub fn exponent(&self, zeta: &[f64], x: f64) -> f64 {
        self.stats.iter().zip(zeta).map(|(s, z)| z * s.eval(x)).sum()
    }

    /// Smallest eigenvalue of the normalized Gram matrix of `{1, c₁, …}` on
    /// Gauss–Legendre nodes over `[-half_width, half_width]`.
    pub fn gram_min_eigenvalue(&self, half_width: f64) -> f64 {
        let (nodes, weights) = GaussLegendre::new(GRAM_NODES).on_interval(-half_width, half_width);
        let k = self.stats.len() + 1;
        let values: Vec<Vec<f64>> = nodes
            .iter()
            .map(|&x| std::iter::once(1.0).chain(self.stats.iter().map(|s| s.eval(x))).collect())
            .collect();
        let mut gram = DMatrix::<f64>::zeros(k, k);
        for (row, w) in values.iter().zip(&weights) {
            for i in 0..k {
                for j in 0..k {
                    gram[(i, j)] += w * row[i] * row[j];
                }
            }
        }
        let scale: Vec<f64> = (0..k).map(|i| gram[(i, i)].sqrt()).collect();
        if scale.iter().any(|&s| s == 0.0) {
            return 0.0;
        }
        for i in 0..k {
            for j in 0..k {
                gram[(i, j)] /= scale[i] * scale[j];
            }
        }
        gram.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn power_terms(&self) -> Vec<Option<PowerTerms>> {
        self.stats.iter().map(|s| s.expr.power_terms()).collect()
    }
}

/// Canonical parameters `(ζ, β)` of a family member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalParams {
    pub zeta: Vec<f64>,
    pub beta: f64,
}

impl CanonicalParams {
    pub fn new(zeta: Vec<f64>, beta: f64) -> Self {
        CanonicalParams { zeta, beta }
    }

    /// Supplied-statistic block `θ = [ζ₃, …]`.
    pub fn theta(&self) -> &[f64] {
        self.zeta.get(2..).unwrap_or(&[])
    }
}

/// Build `c• = [h, h², c₁, …, c_m]`, with `h²` kept as the product `h·h`.
pub fn extend_family(c: Vec<Expr>, h: Expr) -> Result<SufficientStats> {
    extend_family_on(c, h, DEFAULT_GRAM_HALF_WIDTH)
}

/// [`extend_family`] with an explicit independence-test interval.
pub fn extend_family_on(c: Vec<Expr>, h: Expr, half_width: f64) -> Result<SufficientStats> {
    let constant = !h.depends_on_x() || h.polynomial_degree() == Some(0);
    if constant {
        return Err(Error::ConstantObservation);
    }
    let squared = Expr::Mul(Box::new(h.clone()), Box::new(h.clone()));
    let mut entries = vec![(h, StatOrigin::Observation), (squared, StatOrigin::ObservationSquared)];
    entries.extend(c.into_iter().map(|e| (e, StatOrigin::Supplied)));
    let stats = SufficientStats::from_exprs(entries)?;
    let min_eigenvalue = stats.gram_min_eigenvalue(half_width);
    if !(min_eigenvalue > INDEPENDENCE_THRESHOLD) {
        return Err(Error::IndependenceViolation { min_eigenvalue });
    }
    Ok(stats)
}

/// Append `|x|^s` with `s = r + 1`, `r` the largest growth exponent of the
/// family, so any member with a negative coefficient on it is integrable.
pub fn make_integrable(stats: &SufficientStats) -> Result<SufficientStats> {
    let mut r: f64 = 0.0;
    for (index, terms) in stats.power_terms().into_iter().enumerate() {
        let terms = terms.ok_or(Error::UnknownGrowth { index })?;
        r = r.max(terms.growth_exponent().unwrap_or(0.0));
    }
    let mut out = stats.clone();
    out.stats.push(Statistic::new(Expr::abs_pow(Expr::X, r + 1.0)?, StatOrigin::Integrability));
    Ok(out)
}

/// `log q(x; ζ, β) = ζᵀc(x) + β`. Statistics are time-invariant, `t` is
/// accepted for symmetry with the time-dependent coefficients.
pub fn log_q(stats: &SufficientStats, params: &CanonicalParams, x: f64, _t: f64) -> f64 {
    stats.exponent(&params.zeta, x) + params.beta
}

/// Outcome of [`check_integrability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrability {
    Integrable,
    NotIntegrable,
    /// Leading coefficients cancel to rounding level, or a statistic is
    /// outside the analyzable class; treated as not integrable.
    Inconclusive,
}

impl Integrability {
    pub fn is_integrable(self) -> bool {
        self == Integrability::Integrable
    }
}

/// Decide `∫ exp[ζᵀc(x)] dx < ∞` from the leading tail terms on each
/// half-line: integrable iff both are `-μ|x|^p` with `μ > 0, p > 0`.
pub fn check_integrability(stats: &SufficientStats, params: &CanonicalParams) -> Integrability {
    if params.zeta.len() != stats.len() {
        return Integrability::NotIntegrable;
    }
    let mut combined = PowerTerms::default();
    let mut magnitude = PowerTerms::default();
    for (terms, &z) in stats.power_terms().into_iter().zip(&params.zeta) {
        let Some(terms) = terms else {
            return Integrability::Inconclusive;
        };
        combined = combined.add(&terms.scale(z));
        magnitude = magnitude.add(&terms.abs_coefficients().scale(z.abs()));
    }
    let mags = magnitude.descending();
    let mut verdict = Integrability::Integrable;
    for side in [Side::Positive, Side::Negative] {
        let mut decided = false;
        for term in combined.descending() {
            let c = side.pick(term.positive, term.negative);
            let m = mags
                .iter()
                .find(|t| (t.exponent - term.exponent).abs() < 1e-12)
                .map(|t| side.pick(t.positive, t.negative))
                .unwrap_or(0.0);
            if m == 0.0 {
                continue;
            }
            if c.abs() <= CANCELLATION_TOLERANCE * m {
                return Integrability::Inconclusive;
            }
            if !(term.exponent > 0.0 && c < 0.0) {
                verdict = Integrability::NotIntegrable;
            }
            decided = true;
            break;
        }
        if !decided {
            verdict = Integrability::NotIntegrable;
        }
    }
    verdict
}

#[derive(Clone, Copy)]
enum Side {
    Positive,
    Negative,
}

impl Side {
    fn pick(self, positive: f64, negative: f64) -> f64 {
        match self {
            Side::Positive => positive,
            Side::Negative => negative,
        }
    }
}

/// Settings for domain selection and adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub rel_tol: f64,
    /// Integrand at `±L` must be below `tail_ratio × peak`.
    pub tail_ratio: f64,
    pub initial_half_width: f64,
    pub max_half_width: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { rel_tol: 1e-10, tail_ratio: 1e-16, initial_half_width: 1.0, max_half_width: 50.0 }
    }
}

const PEAK_SAMPLES: usize = 4097;

/// Symmetric integration domain for a family member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub half_width: f64,
    /// Largest sampled value of `ζᵀc(x)` on the domain (without `β`).
    pub log_peak: f64,
}

/// Double `L` from `initial_half_width` until `q(±L) < tail_ratio · max q`.
pub fn support(stats: &SufficientStats, params: &CanonicalParams, cfg: &QuadConfig) -> Result<Support> {
    if params.zeta.len() != stats.len() {
        return Err(Error::ParameterLength { expected: stats.len(), got: params.zeta.len() });
    }
    if !check_integrability(stats, params).is_integrable() {
        return Err(Error::NotIntegrable(format!("zeta = {:?}", params.zeta)));
    }
    let log_cut = cfg.tail_ratio.ln();
    let mut half_width = cfg.initial_half_width;
    loop {
        let step = 2.0 * half_width / (PEAK_SAMPLES - 1) as f64;
        let log_peak = (0..PEAK_SAMPLES)
            .map(|i| stats.exponent(&params.zeta, -half_width + step * i as f64))
            .fold(f64::NEG_INFINITY, f64::max);
        let left = stats.exponent(&params.zeta, -half_width);
        let right = stats.exponent(&params.zeta, half_width);
        if left - log_peak < log_cut && right - log_peak < log_cut {
            return Ok(Support { half_width, log_peak });
        }
        half_width *= 2.0;
        if half_width > cfg.max_half_width {
            return Err(Error::DomainGrowthFailure { half_width, cap: cfg.max_half_width });
        }
    }
}

/// `∫ q(x; ζ, β) dx` by adaptive Gauss–Legendre quadrature over the
/// automatically sized support.
pub fn normalize(stats: &SufficientStats, params: &CanonicalParams, cfg: &QuadConfig) -> Result<f64> {
    Ok(log_normalize(stats, params, cfg)?.exp())
}

/// `log ∫ q(x; ζ, β) dx`.
pub fn log_normalize(stats: &SufficientStats, params: &CanonicalParams, cfg: &QuadConfig) -> Result<f64> {
    let sup = support(stats, params, cfg)?;
    let scaled = scaled_integral(stats, params, &sup, cfg, |_| 1.0)?;
    Ok(scaled.ln() + sup.log_peak + params.beta)
}

fn scaled_integral<F: Fn(f64) -> f64>(
    stats: &SufficientStats,
    params: &CanonicalParams,
    sup: &Support,
    cfg: &QuadConfig,
    weight: F,
) -> Result<f64> {
    let q = quad::integrate(
        |x| weight(x) * (stats.exponent(&params.zeta, x) - sup.log_peak).exp(),
        -sup.half_width,
        sup.half_width,
        cfg.rel_tol,
    )?;
    Ok(q.value)
}

/// Mass, mean and central moments of a family member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSummary {
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
    pub third: f64,
    pub fourth: f64,
}

pub fn moment_summary(stats: &SufficientStats, params: &CanonicalParams, cfg: &QuadConfig) -> Result<MomentSummary> {
    let sup = support(stats, params, cfg)?;
    let mass = scaled_integral(stats, params, &sup, cfg, |_| 1.0)?;
    let mean = scaled_integral(stats, params, &sup, cfg, |x| x)? / mass;
    let central = |k: i32| scaled_integral(stats, params, &sup, cfg, |x| (x - mean).powi(k)).map(|v| v / mass);
    Ok(MomentSummary {
        mass: mass * (sup.log_peak + params.beta).exp(),
        mean,
        variance: central(2)?,
        third: central(3)?,
        fourth: central(4)?,
    })
}

/// `k = 1` gives the mean, `k = 2..=4` the central moments of the normalized
/// density.
pub fn moments(stats: &SufficientStats, params: &CanonicalParams, k: usize, cfg: &QuadConfig) -> Result<f64> {
    if !(1..=4).contains(&k) {
        return Err(Error::MomentOrder(k));
    }
    let sup = support(stats, params, cfg)?;
    let mass = scaled_integral(stats, params, &sup, cfg, |_| 1.0)?;
    let mean = scaled_integral(stats, params, &sup, cfg, |x| x)? / mass;
    if k == 1 {
        return Ok(mean);
    }
    Ok(scaled_integral(stats, params, &sup, cfg, |x| (x - mean).powi(k as i32))? / mass)
}

/// Tabulate `q(x; ζ, β)` on `n_nodes` uniform nodes over `bounds`.
pub fn to_grid(stats: &SufficientStats, params: &CanonicalParams, bounds: (f64, f64), n_nodes: usize) -> Result<DensityGrid> {
    DensityGrid::from_fn(bounds.0, bounds.1, n_nodes, |x| log_q(stats, params, x, 0.0).exp())
}

/// Unnormalized density tabulated on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    nodes: Vec<f64>,
    values: Vec<f64>,
    spacing: f64,
    lower: f64,
    upper: f64,
}

impl DensityGrid {
    pub fn new(lower: f64, upper: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < MIN_GRID_NODES {
            return Err(Error::GridTooSmall { min: MIN_GRID_NODES, got: n });
        }
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidGrid(format!("bounds [{lower}, {upper}]")));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("value {} at node {i}", values[i])));
        }
        let spacing = (upper - lower) / (n - 1) as f64;
        let nodes = (0..n).map(|i| node(lower, upper, spacing, i, n)).collect();
        Ok(DensityGrid { nodes, values, spacing, lower, upper })
    }

    pub fn from_fn<F: FnMut(f64) -> f64>(lower: f64, upper: f64, n: usize, mut f: F) -> Result<Self> {
        if n < MIN_GRID_NODES {
            return Err(Error::GridTooSmall { min: MIN_GRID_NODES, got: n });
        }
        let spacing = (upper - lower) / (n - 1) as f64;
        let values = (0..n).map(|i| f(node(lower, upper, spacing, i, n))).collect();
        DensityGrid::new(lower, upper, values)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Trapezoid-rule integral of `f(x)·q(x)`.
    pub fn integrate_with<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let n = self.values.len();
        let inner: f64 = (1..n - 1).map(|i| f(self.nodes[i]) * self.values[i]).sum();
        let ends = 0.5 * (f(self.nodes[0]) * self.values[0] + f(self.nodes[n - 1]) * self.values[n - 1]);
        self.spacing * (inner + ends)
    }

    pub fn mass(&self) -> f64 {
        self.integrate_with(|_| 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.integrate_with(|x| x) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.integrate_with(|x| (x - m) * (x - m)) / self.mass()
    }

    /// Copy scaled to unit trapezoid mass.
    pub fn normalized(&self) -> Result<DensityGrid> {
        let mass = self.mass();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidGrid(format!("total mass {mass}")));
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v /= mass);
        Ok(out)
    }

    /// Linear interpolation, zero outside the grid.
    pub fn interpolate(&self, x: f64) -> f64 {
        if !(x >= self.lower && x <= self.upper) {
            return 0.0;
        }
        let pos = (x - self.lower) / self.spacing;
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let frac = pos - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Linearly interpolate onto another uniform grid.
    pub fn resample(&self, lower: f64, upper: f64, n: usize) -> Result<DensityGrid> {
        DensityGrid::from_fn(lower, upper, n, |x| self.interpolate(x))
    }

    pub fn same_layout(&self, other: &DensityGrid) -> bool {
        self.values.len() == other.values.len() && self.lower == other.lower && self.upper == other.upper
    }

    /// CSV with header `x,q`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,q")?;
        for (x, q) in self.nodes.iter().zip(&self.values) {
            writeln!(w, "{},{}", fmt_f64(*x), fmt_f64(*q))?;
        }
        Ok(())
    }
}

fn node(lower: f64, upper: f64, spacing: f64, i: usize, n: usize) -> f64 {
    if i + 1 == n {
        upper
    } else {
        lower + spacing * i as f64
    }
}

/// Float formatting shared by all CSV/JSON writers: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
