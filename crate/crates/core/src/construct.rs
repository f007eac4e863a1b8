//! Drift construction for filtering problems whose optimal filter stays in
//! the augmented exponential family `EU([h, h², c])`.
//!
//! Given the diffusion coefficient `a_t(x)` and the statistics `c•`, the
//! drift
//!
//! ```text
//! u_t(x, ζ) = ½ ∂a_t/∂x (x) + ½ a_t(x) ζᵀ ∂c•/∂x (x)
//! ```
//!
//! together with the parameter flow `ζ¹_t = Y_t + ζ¹₀`, `ζ²_t = ζ²₀ − t/2`
//! (all other components and `β` frozen) makes `exp[ζ_tᵀc•(x) + β₀]` the
//! unnormalized conditional density. [`GeneralDrift`] carries the extra
//! antiderivative terms needed when `θ = [ζ³, …]` and `β` move along a
//! prescribed deterministic curve.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{self, CanonicalParams, QuadConfig, SufficientStats};
use crate::expr::{CompiledExpr, Expr};
use crate::quad;

/// x-samples used when checking `a > 0`.
const POSITIVITY_NODES: usize = 512;
/// Time samples per unit time when checking `a > 0`.
const POSITIVITY_TIMES_PER_UNIT: f64 = 512.0;
pub const DEFAULT_WORKING_DOMAIN: (f64, f64) = (-5.0, 5.0);

/// The constructed drift `u_t(x, ζ)` and its exact `x`-derivative.
#[derive(Debug, Clone)]
pub struct Drift {
    a: Expr,
    a_x: Expr,
    stat_x: Vec<Expr>,
    a_c: CompiledExpr,
    a_x_c: CompiledExpr,
    a_xx_c: CompiledExpr,
    stat_x_c: Vec<CompiledExpr>,
    stat_xx_c: Vec<CompiledExpr>,
}

/// Build `u_t(x, ζ) = ½ ∂a/∂x + ½ a ζᵀ ∂c•/∂x` with symbolic derivatives.
pub fn build_drift(a: &Expr, stats: &SufficientStats) -> Result<Drift> {
    let a_x = a.differentiate()?;
    let a_xx = a_x.differentiate()?;
    let stat_x: Vec<Expr> = stats.iter().map(|s| s.expr.differentiate()).collect::<Result<_, _>>()?;
    let stat_xx: Vec<Expr> = stat_x.iter().map(Expr::differentiate).collect::<Result<_, _>>()?;
    Ok(Drift {
        a_c: a.compile(),
        a_x_c: a_x.compile(),
        a_xx_c: a_xx.compile(),
        stat_x_c: stat_x.iter().map(Expr::compile).collect(),
        stat_xx_c: stat_xx.iter().map(Expr::compile).collect(),
        a: a.clone(),
        a_x,
        stat_x,
    })
}

impl Drift {
    #[inline]
    pub fn value(&self, x: f64, t: f64, zeta: &[f64]) -> f64 {
        let grad: f64 = self.stat_x_c.iter().zip(zeta).map(|(c, z)| z * c.eval(x, t)).sum();
        0.5 * self.a_x_c.eval(x, t) + 0.5 * self.a_c.eval(x, t) * grad
    }

    /// `∂u/∂x`.
    pub fn slope(&self, x: f64, t: f64, zeta: &[f64]) -> f64 {
        let grad: f64 = self.stat_x_c.iter().zip(zeta).map(|(c, z)| z * c.eval(x, t)).sum();
        let curv: f64 = self.stat_xx_c.iter().zip(zeta).map(|(c, z)| z * c.eval(x, t)).sum();
        0.5 * self.a_xx_c.eval(x, t) + 0.5 * self.a_x_c.eval(x, t) * grad + 0.5 * self.a_c.eval(x, t) * curv
    }

    #[inline]
    pub fn diffusion(&self, x: f64, t: f64) -> f64 {
        self.a_c.eval(x, t)
    }

    /// `(a, ∂a/∂x, ∂²a/∂x²)` at `(x, t)`.
    pub fn diffusion_derivatives(&self, x: f64, t: f64) -> (f64, f64, f64) {
        (self.a_c.eval(x, t), self.a_x_c.eval(x, t), self.a_xx_c.eval(x, t))
    }

    /// `(φ', φ'')` for `φ = ζᵀc•`.
    pub fn exponent_derivatives(&self, zeta: &[f64], x: f64) -> (f64, f64) {
        let d1 = self.stat_x_c.iter().zip(zeta).map(|(c, z)| z * c.eval(x, 0.0)).sum();
        let d2 = self.stat_xx_c.iter().zip(zeta).map(|(c, z)| z * c.eval(x, 0.0)).sum();
        (d1, d2)
    }

    /// The drift for fixed `ζ` as an expression in `x` and `t`.
    pub fn symbolic(&self, zeta: &[f64]) -> Expr {
        let grad = Expr::linear_combination(zeta, &self.stat_x);
        Expr::add(
            Expr::mul(Expr::Const(0.5), self.a_x.clone()),
            Expr::mul(Expr::mul(Expr::Const(0.5), self.a.clone()), grad),
        )
    }
}

/// Closed-form canonical-parameter flow driven by the observation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFlow {
    pub initial: CanonicalParams,
}

impl ParamFlow {
    pub fn new(initial: CanonicalParams) -> Self {
        ParamFlow { initial }
    }

    /// `(ζ_t, β_t)` given the time and the current observation `Y_t`.
    pub fn at(&self, t: f64, y: f64) -> CanonicalParams {
        let mut zeta = self.initial.zeta.clone();
        self.fill(t, y, &mut zeta);
        CanonicalParams { zeta, beta: self.initial.beta }
    }

    /// Write `ζ_t` into `out` (same length as the initial vector).
    #[inline]
    pub fn fill(&self, t: f64, y: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.initial.zeta);
        out[0] = y + self.initial.zeta[0];
        out[1] = self.initial.zeta[1] - 0.5 * t;
    }
}

pub fn param_flow(initial: &CanonicalParams) -> ParamFlow {
    ParamFlow::new(initial.clone())
}

/// A scalar filtering problem with the constructed drift.
#[derive(Debug, Clone)]
pub struct FilterProblem {
    pub a: Expr,
    pub h: Expr,
    pub stats: SufficientStats,
    pub initial: CanonicalParams,
    pub horizon: f64,
    pub drift: Drift,
    flow: ParamFlow,
    h_c: CompiledExpr,
}

impl FilterProblem {
    /// Assemble and validate on the default working domain `[-5, 5]`.
    pub fn new(a: Expr, stats: SufficientStats, initial: CanonicalParams, horizon: f64) -> Result<Self> {
        Self::with_domain(a, stats, initial, horizon, DEFAULT_WORKING_DOMAIN)
    }

    pub fn with_domain(
        a: Expr,
        stats: SufficientStats,
        initial: CanonicalParams,
        horizon: f64,
        domain: (f64, f64),
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
        }
        if stats.len() < 2 {
            return Err(Error::InvalidConfig("statistics must start with h and h^2".into()));
        }
        if initial.zeta.len() != stats.len() {
            return Err(Error::ParameterLength { expected: stats.len(), got: initial.zeta.len() });
        }
        if !expfam::check_integrability(&stats, &initial).is_integrable() {
            return Err(Error::NotIntegrable(format!("initial zeta = {:?}", initial.zeta)));
        }
        check_positive_diffusion(&a, horizon, domain)?;
        let drift = build_drift(&a, &stats)?;
        let h = stats.get(0).expr.clone();
        Ok(FilterProblem {
            h_c: h.compile(),
            h,
            flow: ParamFlow::new(initial.clone()),
            a,
            stats,
            initial,
            horizon,
            drift,
        })
    }

    pub fn flow(&self) -> &ParamFlow {
        &self.flow
    }

    #[inline]
    pub fn observation(&self, x: f64) -> f64 {
        self.h_c.eval(x, 0.0)
    }

    /// Drift at `(x, t)` with `ζ` from the flow at the current observation.
    #[inline]
    pub fn drift_at(&self, x: f64, t: f64, y: f64) -> f64 {
        let z = &self.initial.zeta;
        // ζ¹ and ζ² change with (t, y), the rest is frozen.
        let mut grad = 0.0;
        for (i, c) in self.drift.stat_x_c.iter().enumerate() {
            let zi = match i {
                0 => y + z[0],
                1 => z[1] - 0.5 * t,
                _ => z[i],
            };
            grad += zi * c.eval(x, t);
        }
        0.5 * self.drift.a_x_c.eval(x, t) + 0.5 * self.drift.a_c.eval(x, t) * grad
    }

    /// Closed-form filter parameters at time `t` given `Y_t = y`.
    pub fn closed_form(&self, t: f64, y: f64) -> CanonicalParams {
        self.flow.at(t, y)
    }

    pub fn condition_a(&self, domain: &LipschitzDomain) -> ConditionReport {
        check_condition_a(&self.a, &self.stats, &self.initial, self.horizon, domain)
    }
}

fn check_positive_diffusion(a: &Expr, horizon: f64, domain: (f64, f64)) -> Result<()> {
    let compiled = a.compile();
    let n_times = ((POSITIVITY_TIMES_PER_UNIT * horizon).ceil() as usize).max(1) + 1;
    let dx = (domain.1 - domain.0) / (POSITIVITY_NODES - 1) as f64;
    // The origin is probed too since typical degenerate coefficients vanish there.
    let origin = (domain.0 < 0.0 && domain.1 > 0.0).then_some(0.0);
    for j in 0..n_times {
        let t = horizon * j as f64 / (n_times - 1) as f64;
        for x in (0..POSITIVITY_NODES).map(|i| domain.0 + dx * i as f64).chain(origin) {
            let value = compiled.eval(x, t);
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveDiffusion { x, t, value });
            }
        }
    }
    Ok(())
}

/// Parameter flow when `θ = [ζ³, …]` and `β` follow `θ̇(t)`, `β̇(t)`.
#[derive(Debug, Clone)]
pub struct GeneralFlow {
    pub initial: CanonicalParams,
    theta_dot: Vec<Expr>,
    beta_dot: Expr,
}

impl GeneralFlow {
    pub fn at(&self, t: f64, y: f64) -> Result<CanonicalParams> {
        let mut zeta = self.initial.zeta.clone();
        zeta[0] += y;
        zeta[1] -= 0.5 * t;
        for (i, rate) in self.theta_dot.iter().enumerate() {
            zeta[i + 2] += integrate_in_time(rate, t)?;
        }
        let beta = self.initial.beta + integrate_in_time(&self.beta_dot, t)?;
        Ok(CanonicalParams { zeta, beta })
    }

    /// `(θ̇(t), β̇(t))`.
    pub fn rates(&self, t: f64) -> (Vec<f64>, f64) {
        (
            self.theta_dot.iter().map(|e| e.evaluate(0.0, t)).collect(),
            self.beta_dot.evaluate(0.0, t),
        )
    }
}

fn integrate_in_time(rate: &Expr, t: f64) -> Result<f64> {
    if let Expr::Const(c) = rate {
        return Ok(c * t);
    }
    Ok(quad::integrate(|s| rate.evaluate(0.0, s), 0.0, t, 1e-13)?.value)
}

const TABLE_NODES: usize = 257;
const TABLE_TOL: f64 = 1e-12;

/// Cumulative integrals `∫_{-L}^{x_k} g(z) e^{ζᵀc•(z) − M} dz` for
/// `g ∈ {1, c₃, …}` on a uniform grid, for one `(t, ζ)`.
#[derive(Debug)]
struct AntiderivativeTable {
    lower: f64,
    spacing: f64,
    log_peak: f64,
    /// `cumulative[g][k]`, `g = 0` is the constant function.
    cumulative: Vec<Vec<f64>>,
}

type CacheKey = (u64, Vec<u64>);

/// Drift solving the linear ODE for nonconstant `(θ_t, β_t)`:
///
/// ```text
/// u = ½ a' + ½ a ζᵀc•' − θ̇ᵀ e^{−ζᵀc•(x)} ∫_{−L}^x c(z) e^{ζᵀc•(z)} dz
///                      − β̇  e^{−ζᵀc•(x)} ∫_{−L}^x e^{ζᵀc•(z)} dz
/// ```
///
/// The lower limit `−L` is the quadrature support of `q(·; ζ)`. The
/// antiderivatives are tabulated once per `(t, ζ)` behind a lock.
pub struct GeneralDrift {
    base: Drift,
    stats: SufficientStats,
    flow: GeneralFlow,
    quad: QuadConfig,
    cache: RwLock<HashMap<CacheKey, Arc<AntiderivativeTable>>>,
}

/// Build the drift for a prescribed deterministic curve `t ↦ (θ_t, β_t)`.
pub fn build_general_drift(
    a: &Expr,
    stats: &SufficientStats,
    initial: &CanonicalParams,
    theta_dot: Vec<Expr>,
    beta_dot: Expr,
) -> Result<GeneralDrift> {
    let m = stats.len().saturating_sub(2);
    if theta_dot.len() != m {
        return Err(Error::ParameterLength { expected: m, got: theta_dot.len() });
    }
    if initial.zeta.len() != stats.len() {
        return Err(Error::ParameterLength { expected: stats.len(), got: initial.zeta.len() });
    }
    if theta_dot.iter().chain(std::iter::once(&beta_dot)).any(Expr::depends_on_x) {
        return Err(Error::InvalidConfig("theta_dot and beta_dot must be functions of t only".into()));
    }
    Ok(GeneralDrift {
        base: build_drift(a, stats)?,
        stats: stats.clone(),
        flow: GeneralFlow { initial: initial.clone(), theta_dot, beta_dot },
        quad: QuadConfig::default(),
        cache: RwLock::new(HashMap::new()),
    })
}

impl GeneralDrift {
    pub fn flow(&self) -> &GeneralFlow {
        &self.flow
    }

    pub fn base(&self) -> &Drift {
        &self.base
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    /// `u_t(x; ζ)` including the antiderivative terms.
    pub fn value(&self, x: f64, t: f64, zeta: &[f64]) -> Result<f64> {
        let (theta_dot, beta_dot) = self.flow.rates(t);
        let mut u = self.base.value(x, t, zeta);
        if beta_dot == 0.0 && theta_dot.iter().all(|&r| r == 0.0) {
            return Ok(u);
        }
        let table = self.table(t, zeta)?;
        let phi = self.stats.exponent(zeta, x);
        let factor = (table.log_peak - phi).exp();
        let k = (((x - table.lower) / table.spacing).floor().max(0.0) as usize).min(TABLE_NODES - 1);
        let x_k = table.lower + table.spacing * k as f64;
        for (g, rate) in std::iter::once(beta_dot).chain(theta_dot).enumerate() {
            if rate == 0.0 {
                continue;
            }
            let rest = self.partial(g, zeta, table.log_peak, x_k, x)?;
            u -= rate * factor * (table.cumulative[g][k] + rest);
        }
        Ok(u)
    }

    fn weight(&self, g: usize, z: f64) -> f64 {
        if g == 0 {
            1.0
        } else {
            self.stats.get(g + 1).eval(z)
        }
    }

    fn partial(&self, g: usize, zeta: &[f64], log_peak: f64, from: f64, to: f64) -> Result<f64> {
        Ok(quad::integrate(
            |z| self.weight(g, z) * (self.stats.exponent(zeta, z) - log_peak).exp(),
            from,
            to,
            TABLE_TOL,
        )?
        .value)
    }

    fn table(&self, t: f64, zeta: &[f64]) -> Result<Arc<AntiderivativeTable>> {
        let key: CacheKey = (t.to_bits(), zeta.iter().map(|z| z.to_bits()).collect());
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let params = CanonicalParams::new(zeta.to_vec(), 0.0);
        let sup = expfam::support(&self.stats, &params, &self.quad)?;
        let lower = -sup.half_width;
        let spacing = 2.0 * sup.half_width / (TABLE_NODES - 1) as f64;
        let groups = self.stats.len() - 1;
        let mut cumulative = vec![vec![0.0; TABLE_NODES]; groups];
        for (g, column) in cumulative.iter_mut().enumerate() {
            for k in 1..TABLE_NODES {
                let a = lower + spacing * (k - 1) as f64;
                let b = lower + spacing * k as f64;
                column[k] = column[k - 1] + self.partial(g, zeta, sup.log_peak, a, b)?;
            }
        }
        let table = Arc::new(AntiderivativeTable { lower, spacing, log_peak: sup.log_peak, cumulative });
        self.cache.write().expect("cache lock").insert(key, Arc::clone(&table));
        Ok(table)
    }
}

/// Domain on which Lipschitz constants are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzDomain {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Default for LipschitzDomain {
    fn default() -> Self {
        LipschitzDomain { x: (-5.0, 5.0), y: (-5.0, 5.0) }
    }
}

const LIPSCHITZ_NODES: usize = 2048;
const LIPSCHITZ_TIMES: usize = 32;

/// Label of the region a [`ConditionItem`] was evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDomain {
    pub x: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<[f64; 2]>,
}

/// One sufficient condition. `pass` is the global verdict; `local_pass`
/// and `constant` refer to the labelled bounded domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionItem {
    pub name: String,
    pub pass: bool,
    pub local_pass: bool,
    pub constant: Option<f64>,
    pub domain: ItemDomain,
}

/// Advisory report on the sufficient conditions for the filter density to
/// solve the Zakai equation. Failures are warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub items: Vec<ConditionItem>,
}

impl ConditionReport {
    pub fn item(&self, prefix: &str) -> Option<&ConditionItem> {
        self.items.iter().find(|it| it.name.starts_with(prefix))
    }

    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|it| it.pass)
    }
}

fn max_slope(e: &CompiledExpr, (lo, hi): (f64, f64), t: f64) -> f64 {
    let dx = (hi - lo) / (LIPSCHITZ_NODES - 1) as f64;
    let mut prev = e.eval(lo, t);
    let mut best: f64 = 0.0;
    for i in 1..LIPSCHITZ_NODES {
        let cur = e.eval(lo + dx * i as f64, t);
        best = best.max(((cur - prev) / dx).abs());
        prev = cur;
    }
    best
}

fn max_abs(e: &CompiledExpr, (lo, hi): (f64, f64), t: f64) -> f64 {
    let dx = (hi - lo) / (LIPSCHITZ_NODES - 1) as f64;
    (0..LIPSCHITZ_NODES).map(|i| e.eval(lo + dx * i as f64, t).abs()).fold(0.0, f64::max)
}

/// `f'` is bounded on the real line (exactly, via the power expansion).
fn globally_lipschitz(f: &Expr) -> bool {
    let Ok(df) = f.differentiate() else {
        return false;
    };
    match df.power_terms() {
        Some(terms) => terms.growth_exponent().map_or(true, |p| p <= 0.0),
        None => false,
    }
}

fn identically_zero(e: &Expr) -> bool {
    match e.power_terms() {
        Some(terms) => terms.terms().iter().all(|t| t.positive == 0.0 && t.negative == 0.0),
        None => e.is_zero(),
    }
}

fn time_samples(horizon: f64) -> Vec<f64> {
    (0..LIPSCHITZ_TIMES).map(|j| horizon * j as f64 / (LIPSCHITZ_TIMES - 1) as f64).collect()
}

fn finite(c: f64) -> Option<f64> {
    c.is_finite().then_some(c)
}

/// Estimate the sufficient conditions (i)–(iv) on a bounded domain.
pub fn check_condition_a(
    a: &Expr,
    stats: &SufficientStats,
    initial: &CanonicalParams,
    horizon: f64,
    domain: &LipschitzDomain,
) -> ConditionReport {
    let x_label = [domain.x.0, domain.x.1];
    let t_label = Some([0.0, horizon]);
    let times = time_samples(horizon);
    let mut items = Vec::new();

    let h = &stats.get(0).expr;
    let h_const = max_slope(&h.compile(), domain.x, 0.0);
    items.push(ConditionItem {
        name: "(i) h".into(),
        pass: globally_lipschitz(h),
        local_pass: h_const.is_finite(),
        constant: finite(h_const),
        domain: ItemDomain { x: x_label, y: None, t: None },
    });

    let a_x = a.differentiate();
    let mut candidates: Vec<(String, Result<Expr, _>)> = vec![("(ii) a_t".into(), Ok(a.clone())), ("(ii) d/dx a_t".into(), a_x.clone())];
    for j in 1..stats.len() {
        let product = stats.get(j).expr.differentiate().map(|d| Expr::mul(a.clone(), d));
        candidates.push((format!("(ii) a_t * d/dx c[{}]", j + 1), product));
    }
    for (name, f) in candidates {
        let item = match f {
            Ok(f) => {
                let mut constant: f64 = 0.0;
                let mut global = true;
                for &t in &times {
                    let ft = f.at_time(t);
                    constant = constant.max(max_slope(&ft.compile(), domain.x, t));
                    global &= globally_lipschitz(&ft);
                }
                ConditionItem {
                    name,
                    pass: global,
                    local_pass: constant.is_finite(),
                    constant: finite(constant),
                    domain: ItemDomain { x: x_label, y: None, t: t_label },
                }
            }
            Err(_) => ConditionItem {
                name,
                pass: false,
                local_pass: false,
                constant: None,
                domain: ItemDomain { x: x_label, y: None, t: t_label },
            },
        };
        items.push(item);
    }

    // (iii): g(x, y) = a_t(x)·y·h'(x). ∂g/∂y = a h', ∂g/∂x = y (a h')'.
    let y_max = domain.y.0.abs().max(domain.y.1.abs());
    let third = match h.differentiate() {
        Ok(dh) => {
            let mut constant: f64 = 0.0;
            let mut global = true;
            for &t in &times {
                let g = Expr::mul(a.at_time(t), dh.clone());
                let gc = g.compile();
                let sx = y_max * max_slope(&gc, domain.x, t);
                let sy = max_abs(&gc, domain.x, t);
                constant = constant.max(sx.hypot(sy));
                global &= g.differentiate().map(|d| identically_zero(&d)).unwrap_or(false);
            }
            ConditionItem {
                name: "(iii) a_t * y * d/dx h".into(),
                pass: global,
                local_pass: constant.is_finite(),
                constant: finite(constant),
                domain: ItemDomain { x: x_label, y: Some([domain.y.0, domain.y.1]), t: t_label },
            }
        }
        Err(_) => ConditionItem {
            name: "(iii) a_t * y * d/dx h".into(),
            pass: false,
            local_pass: false,
            constant: None,
            domain: ItemDomain { x: x_label, y: Some([domain.y.0, domain.y.1]), t: t_label },
        },
    };
    items.push(third);

    // Y₀ = 0 holds by construction of every simulated path.
    let in_family = initial.zeta.len() == stats.len() && expfam::check_integrability(stats, initial).is_integrable();
    items.push(ConditionItem {
        name: "(iv) Y_0 = 0 and q_0 in EU(c*)".into(),
        pass: in_family,
        local_pass: in_family,
        constant: None,
        domain: ItemDomain { x: x_label, y: None, t: None },
    });

    ConditionReport { items }
}
