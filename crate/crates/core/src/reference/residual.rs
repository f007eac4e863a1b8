//! Pointwise residual of the Stratonovich DMZ equation for
//! `q = exp[ζ_tᵀc•(x) + β_t]`.
//!
//! Dividing `dq = 𝒰*q dt − ½h²q dt + h q ∘ dY` by `q` and equating with the
//! chain rule `dq/q = Σ c•_i dζ^i + dβ` gives, with `φ = ζᵀc•`,
//!
//! ```text
//! R_dt = −(u' + uφ') + ½(a'' + 2a'φ' + aφ'' + aφ'²) − ½h² − (−½c•₂ + θ̇ᵀc + β̇)
//! R_dY = h − c•₁
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::construct::{Drift, FilterProblem, GeneralDrift, ParamFlow};
use crate::error::Result;
use crate::expfam::CanonicalParams;
use crate::expr::Expr;

/// A drift that can be written down as an expression for fixed `ζ`.
pub trait SymbolicDrift {
    fn drift_expr(&self, zeta: &[f64]) -> Expr;
}

impl SymbolicDrift for Drift {
    fn drift_expr(&self, zeta: &[f64]) -> Expr {
        self.symbolic(zeta)
    }
}

/// `base + perturbation`, used to show the residual detects wrong drifts.
pub struct PerturbedDrift<'a> {
    pub base: &'a dyn SymbolicDrift,
    pub perturbation: Expr,
}

impl<'a> PerturbedDrift<'a> {
    /// `u + ε·x`.
    pub fn linear(base: &'a dyn SymbolicDrift, epsilon: f64) -> Self {
        PerturbedDrift { base, perturbation: Expr::mul(Expr::Const(epsilon), Expr::X) }
    }
}

impl SymbolicDrift for PerturbedDrift<'_> {
    fn drift_expr(&self, zeta: &[f64]) -> Expr {
        Expr::add(self.base.drift_expr(zeta), self.perturbation.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualReport {
    pub probes: usize,
    pub max_dt: f64,
    pub max_dy: f64,
    /// `|R_dt|` relative to the sum of magnitudes of its terms.
    pub max_rel_dt: f64,
    pub max_rel_dy: f64,
    /// Probe `(x, t)` attaining `max_dt`.
    pub worst: (f64, f64),
}

impl ResidualReport {
    fn record(&mut self, x: f64, t: f64, dt_terms: &[f64], dy_terms: (f64, f64)) {
        let r_dt: f64 = dt_terms.iter().sum();
        let scale_dt: f64 = dt_terms.iter().map(|v| v.abs()).sum();
        let r_dy = dy_terms.0 - dy_terms.1;
        let scale_dy = dy_terms.0.abs() + dy_terms.1.abs();
        self.probes += 1;
        if r_dt.abs() > self.max_dt || self.probes == 1 {
            self.worst = (x, t);
        }
        self.max_dt = self.max_dt.max(r_dt.abs());
        self.max_dy = self.max_dy.max(r_dy.abs());
        if scale_dt > 0.0 {
            self.max_rel_dt = self.max_rel_dt.max(r_dt.abs() / scale_dt);
        }
        if scale_dy > 0.0 {
            self.max_rel_dy = self.max_rel_dy.max(r_dy.abs() / scale_dy);
        }
    }

    pub fn max(&self) -> f64 {
        self.max_dt.max(self.max_dy)
    }
}

/// `n` probes uniform on `x_range × t_range`.
pub fn random_probes(seed: u64, n: usize, x_range: (f64, f64), t_range: (f64, f64)) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (rng.random_range(x_range.0..=x_range.1), rng.random_range(t_range.0..=t_range.1)))
        .collect()
}

/// Residual of the constructed drift with `ζ` from the closed-form flow
/// started at `zeta0`, at a fixed observation value `Y_t = y`.
pub fn dmz_residual(problem: &FilterProblem, zeta0: &CanonicalParams, probes: &[(f64, f64)], y: f64) -> Result<ResidualReport> {
    dmz_residual_with(problem, &problem.drift, zeta0, probes, y)
}

/// [`dmz_residual`] for an arbitrary symbolic drift.
pub fn dmz_residual_with(
    problem: &FilterProblem,
    drift: &dyn SymbolicDrift,
    zeta0: &CanonicalParams,
    probes: &[(f64, f64)],
    y: f64,
) -> Result<ResidualReport> {
    let flow = ParamFlow::new(zeta0.clone());
    let h = &problem.h;
    let c1 = &problem.stats.get(0).expr;
    let c2 = &problem.stats.get(1).expr;
    let mut report = ResidualReport::default();
    for &(x, t) in probes {
        let zeta = flow.at(t, y).zeta;
        let u_expr = drift.drift_expr(&zeta);
        let u = u_expr.evaluate(x, t);
        let u_x = u_expr.differentiate()?.evaluate(x, t);
        let (a, a_x, a_xx) = problem.drift.diffusion_derivatives(x, t);
        let (p1, p2) = problem.drift.exponent_derivatives(&zeta, x);
        let hx = h.evaluate(x, t);
        let terms = [
            -u_x,
            -u * p1,
            0.5 * a_xx,
            a_x * p1,
            0.5 * a * p2,
            0.5 * a * p1 * p1,
            -0.5 * hx * hx,
            0.5 * c2.evaluate(x, t),
        ];
        report.record(x, t, &terms, (hx, c1.evaluate(x, t)));
    }
    Ok(report)
}

const FD_STEP: f64 = 1e-3;

/// Residual of the generalized drift along its prescribed `(θ_t, β_t)`
/// curve. `∂u/∂x` is taken by Richardson-extrapolated central differences
/// since `u` contains quadrature terms.
pub fn general_dmz_residual(drift: &GeneralDrift, probes: &[(f64, f64)], y: f64) -> Result<ResidualReport> {
    let stats = drift.stats();
    let base = drift.base();
    let mut report = ResidualReport::default();
    for &(x, t) in probes {
        let params = drift.flow().at(t, y)?;
        let zeta = &params.zeta;
        let (theta_dot, beta_dot) = drift.flow().rates(t);
        let u = drift.value(x, t, zeta)?;
        let central = |step: f64| -> Result<f64> {
            Ok((drift.value(x + step, t, zeta)? - drift.value(x - step, t, zeta)?) / (2.0 * step))
        };
        let (d1, d2) = (central(FD_STEP)?, central(0.5 * FD_STEP)?);
        let u_x = (4.0 * d2 - d1) / 3.0;
        let (a, a_x, a_xx) = base.diffusion_derivatives(x, t);
        let (p1, p2) = base.exponent_derivatives(zeta, x);
        let hx = stats.get(0).eval(x);
        let mut terms = vec![
            -u_x,
            -u * p1,
            0.5 * a_xx,
            a_x * p1,
            0.5 * a * p2,
            0.5 * a * p1 * p1,
            -0.5 * hx * hx,
            0.5 * stats.get(1).eval(x),
            -beta_dot,
        ];
        terms.extend(theta_dot.iter().enumerate().map(|(i, r)| -r * stats.get(i + 2).eval(x)));
        report.record(x, t, &terms, (hx, hx));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::build_general_drift;
    use crate::expfam::extend_family;
    use crate::expr::parse;

    fn cubic() -> FilterProblem {
        let stats = extend_family(vec![], parse("x^3").unwrap()).unwrap();
        FilterProblem::new(Expr::Const(1.0), stats, CanonicalParams::new(vec![0.0, -1.0], 0.0), 1.0).unwrap()
    }

    #[test]
    fn constructed_drift_has_zero_residual() {
        let p = cubic();
        let probes = random_probes(1, 200, (-2.0, 2.0), (0.0, 1.0));
        for y in [-1.5, 0.0, 0.7] {
            let r = dmz_residual(&p, &p.initial, &probes, y).unwrap();
            assert_eq!(r.probes, 200);
            assert!(r.max() <= 1e-9, "{r:?}");
            assert!(r.max_rel_dt <= 1e-8);
        }
    }

    #[test]
    fn nonconstant_diffusion_has_zero_residual() {
        let stats = extend_family(vec![], Expr::X).unwrap();
        let init = CanonicalParams::new(vec![0.3, -0.5], 0.0);
        let p = FilterProblem::new(parse("1 + 0.5*x^2 + 0.25*t*x^2").unwrap(), stats, init.clone(), 1.0).unwrap();
        let r = dmz_residual(&p, &init, &random_probes(2, 200, (-2.0, 2.0), (0.0, 1.0)), 0.4).unwrap();
        assert!(r.max() <= 1e-9, "{r:?}");
    }

    #[test]
    fn perturbed_drift_is_detected() {
        let p = cubic();
        let bad = PerturbedDrift::linear(&p.drift, 0.01);
        let r = dmz_residual_with(&p, &bad, &p.initial, &random_probes(3, 200, (-2.0, 2.0), (0.0, 1.0)), 0.5).unwrap();
        assert!(r.max_dt >= 1e-4, "{r:?}");
    }

    #[test]
    fn general_drift_residual_along_moving_theta() {
        let stats = extend_family(vec![parse("x^4").unwrap()], Expr::X).unwrap();
        let init = CanonicalParams::new(vec![0.2, -0.5, -0.1], 0.0);
        let g = build_general_drift(
            &parse("1 + 0.2*x^2").unwrap(),
            &stats,
            &init,
            vec![parse("-0.05*(1 + t)").unwrap()],
            parse("0.3").unwrap(),
        )
        .unwrap();
        let r = general_dmz_residual(&g, &random_probes(4, 40, (-1.5, 1.5), (0.0, 1.0)), 0.3).unwrap();
        assert!(r.max_dt <= 1e-6, "{r:?}");
    }
}
