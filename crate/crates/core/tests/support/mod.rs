//! Property suites shared by `tests/properties.rs` and the acceptance runner.
//! Each suite runs a deterministic proptest runner and returns the first
//! failure as text.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use fdfilter::expfam::{
    check_integrability, extend_family, log_q, moment_summary, normalize, CanonicalParams, DensityGrid, Integrability,
    QuadConfig,
};
use fdfilter::expr::{parse, Expr};
use fdfilter::harness::compare_densities;
use fdfilter::sde::{simulate, ExplicitModel, InitialLaw, SimConfig};

pub type Suite = (&'static str, fn() -> Result<(), String>);

pub const SUITES: &[Suite] = &[
    ("expr derivative vs finite difference", derivative_matches_finite_difference),
    ("expr parser round-trip", parser_round_trip),
    ("expr differentiation linearity", differentiation_is_linear),
    ("expfam gaussian moments", gaussian_moments),
    ("expfam beta-shift equivariance", beta_shift_equivariance),
    ("expfam integrability vs tail evaluation", integrability_matches_tails),
    ("sde simulator determinism", simulator_determinism),
    ("compare_densities gaussian L1", gaussian_l1),
];

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

/// Polynomial trees in `x` of degree at most 8.
pub fn polynomial() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![(-3.0..3.0f64).prop_map(Expr::Const), Just(Expr::X)];
    leaf.prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), 0u32..4).prop_map(|(a, n)| Expr::pow(a, n)),
        ]
    })
    .prop_filter("degree <= 8", |e| e.polynomial_degree().is_some_and(|d| d <= 8))
}

/// Trees over the whole grammar, kept small enough that `exp` rarely
/// overflows on the probe box.
pub fn any_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![(-2.0..2.0f64).prop_map(Expr::Const), Just(Expr::X), Just(Expr::T)];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), 0u32..4).prop_map(|(a, n)| Expr::pow(a, n)),
            (inner.clone(), prop_oneof![Just(0.5), Just(1.5), Just(2.5), Just(3.0)])
                .prop_map(|(a, s)| Expr::abs_pow(a, s).expect("positive exponent")),
            inner.clone().prop_map(|a| Expr::exp(Expr::mul(Expr::Const(0.1), a))),
            inner.prop_map(Expr::neg),
        ]
    })
}

fn points(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, n)
}

pub fn derivative_matches_finite_difference() -> Result<(), String> {
    check(128, (polynomial(), points(100, -3.0, 3.0)), |(e, xs)| {
        let d = e.differentiate().map_err(|err| TestCaseError::fail(err.to_string()))?;
        let step = 1e-6;
        for x in xs {
            let exact = d.evaluate(x, 0.0);
            let fd = (e.evaluate(x + step, 0.0) - e.evaluate(x - step, 0.0)) / (2.0 * step);
            prop_assert!(
                (exact - fd).abs() <= 1e-4 * (1.0 + exact.abs()),
                "{e}: d/dx at {x} = {exact}, central difference {fd}"
            );
        }
        Ok(())
    })
}

fn same_value(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

pub fn parser_round_trip() -> Result<(), String> {
    let probes = (points(100, -2.0, 2.0), points(100, 0.0, 1.0));
    check(256, (any_expr(), probes), |(tree, (xs, ts))| {
        let source = tree.to_string();
        let first = parse(&source).map_err(|err| TestCaseError::fail(format!("{source}: {err}")))?;
        let printed = first.to_string();
        let second = parse(&printed).map_err(|err| TestCaseError::fail(format!("{printed}: {err}")))?;
        for (&x, &t) in xs.iter().zip(&ts) {
            let (a, b) = (first.evaluate(x, t), second.evaluate(x, t));
            prop_assert!(same_value(a, b), "{source} -> {printed}: {a} vs {b} at ({x}, {t})");
        }
        Ok(())
    })
}

pub fn differentiation_is_linear() -> Result<(), String> {
    let weights = (-3.0..3.0f64, -3.0..3.0f64);
    check(128, (polynomial(), polynomial(), weights, points(20, -3.0, 3.0)), |(f, g, (a, b), xs)| {
        let fail = |err: fdfilter::expr::ExprError| TestCaseError::fail(err.to_string());
        let combined = Expr::add(Expr::mul(Expr::Const(a), f.clone()), Expr::mul(Expr::Const(b), g.clone()));
        let lhs = combined.differentiate().map_err(fail)?;
        let (df, dg) = (f.differentiate().map_err(fail)?, g.differentiate().map_err(fail)?);
        for x in xs {
            let (l, r) = (lhs.evaluate(x, 0.0), a * df.evaluate(x, 0.0) + b * dg.evaluate(x, 0.0));
            let scale = 1.0 + (a * df.evaluate(x, 0.0)).abs() + (b * dg.evaluate(x, 0.0)).abs();
            prop_assert!((l - r).abs() <= 1e-12 * scale, "{l} vs {r} at {x}");
        }
        Ok(())
    })
}

fn gaussian_stats() -> fdfilter::expfam::SufficientStats {
    extend_family(vec![], Expr::X).expect("gaussian family")
}

pub fn gaussian_moments() -> Result<(), String> {
    let stats = gaussian_stats();
    let cfg = QuadConfig::default();
    check(64, (-3.0..3.0f64, -3.0..-0.1f64, -2.0..2.0f64), |(z1, z2, beta)| {
        let params = CanonicalParams::new(vec![z1, z2], beta);
        let m = moment_summary(&stats, &params, &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let var = -0.5 / z2;
        let mean = z1 * var;
        let mass = (2.0 * std::f64::consts::PI * var).sqrt() * (beta + 0.5 * mean * mean / var).exp();
        let close = |got: f64, want: f64| (got - want).abs() <= 1e-8 * (1.0 + want.abs());
        prop_assert!(close(m.mean, mean), "mean {} vs {mean}", m.mean);
        prop_assert!(close(m.variance, var), "variance {} vs {var}", m.variance);
        prop_assert!(close(m.third, 0.0), "third {}", m.third);
        prop_assert!(close(m.fourth, 3.0 * var * var), "fourth {} vs {}", m.fourth, 3.0 * var * var);
        prop_assert!((m.mass - mass).abs() <= 1e-8 * mass, "mass {} vs {mass}", m.mass);
        Ok(())
    })
}

pub fn beta_shift_equivariance() -> Result<(), String> {
    // Quartic-tailed family [x, x^2, x^3, x^4].
    let stats = extend_family(vec![parse("x^3").unwrap(), parse("x^4").unwrap()], Expr::X).expect("quartic family");
    let cfg = QuadConfig::default();
    let zeta = (-1.0..1.0f64, -1.0..1.0f64, -0.5..0.5f64, -1.0..-0.05f64);
    check(64, (zeta, -1.0..1.0f64, -5.0..5.0f64), |((z1, z2, z3, z4), beta, delta)| {
        let fail = |e: fdfilter::Error| TestCaseError::fail(e.to_string());
        let base = CanonicalParams::new(vec![z1, z2, z3, z4], beta);
        let shifted = CanonicalParams::new(vec![z1, z2, z3, z4], beta + delta);
        let (z0, zs) = (normalize(&stats, &base, &cfg).map_err(fail)?, normalize(&stats, &shifted, &cfg).map_err(fail)?);
        let expected = z0 * delta.exp();
        prop_assert!((zs - expected).abs() <= 1e-12 * expected, "Z(beta+delta) = {zs}, e^delta Z(beta) = {expected}");
        let (m0, ms) = (moment_summary(&stats, &base, &cfg).map_err(fail)?, moment_summary(&stats, &shifted, &cfg).map_err(fail)?);
        for (a, b) in [(m0.mean, ms.mean), (m0.variance, ms.variance), (m0.third, ms.third), (m0.fourth, ms.fourth)] {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "moment changed: {a} vs {b}");
        }
        Ok(())
    })
}

pub fn integrability_matches_tails() -> Result<(), String> {
    // [x^3, x^6, x, x^2]: odd leading terms make the sign of the x^6
    // coefficient decisive.
    let stats = extend_family(vec![Expr::X, parse("x^2").unwrap()], parse("x^3").unwrap()).expect("sextic family");
    let coeff = -1.0..1.0f64;
    check(200, (coeff.clone(), coeff.clone(), coeff.clone(), coeff), |(z1, z2, z3, z4)| {
        let params = CanonicalParams::new(vec![z1, z2, z3, z4], 0.0);
        let verdict = check_integrability(&stats, &params);
        if verdict == Integrability::Inconclusive {
            return Ok(());
        }
        let tails_decay = log_q(&stats, &params, 1e3, 0.0) < 0.0 && log_q(&stats, &params, -1e3, 0.0) < 0.0;
        prop_assert_eq!(verdict.is_integrable(), tails_decay, "zeta = {:?}", params.zeta);
        Ok(())
    })
}

pub fn simulator_determinism() -> Result<(), String> {
    let model = ExplicitModel::new(
        &parse("-x + 0.5*x^2 - x^3").unwrap(),
        &parse("1 + 0.25*x^2").unwrap(),
        &parse("x^3").unwrap(),
        InitialLaw::Point(0.3),
    );
    check(32, any::<u64>(), |seed| {
        let cfg = SimConfig::new(1e-2, 1.0, seed);
        let (a, b) = (simulate(&model, &cfg), simulate(&model, &cfg));
        let (a, b) = (a.map_err(|e| TestCaseError::fail(e.to_string()))?, b.map_err(|e| TestCaseError::fail(e.to_string()))?);
        prop_assert_eq!(&a, &b);
        let other = simulate(&model, &SimConfig::new(1e-2, 1.0, seed.wrapping_add(1))).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_ne!(&a.y, &other.y);
        Ok(())
    })
}

/// `‖N(0,1) − N(δ,1)‖₁ = 2(2Φ(δ/2) − 1)`.
fn shifted_gaussian_l1(delta: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    2.0 * (2.0 * Normal::standard().cdf(0.5 * delta.abs()) - 1.0)
}

fn unit_gaussian(mu: f64) -> DensityGrid {
    DensityGrid::from_fn(-10.0, 10.0, 4097, |x| (-0.5 * (x - mu).powi(2)).exp()).expect("grid")
}

pub fn gaussian_l1() -> Result<(), String> {
    let (l1, _) = compare_densities(&unit_gaussian(0.0), &unit_gaussian(0.1)).map_err(|e| e.to_string())?;
    if (l1 - 0.0798).abs() > 1e-3 {
        return Err(format!("L1(N(0,1), N(0.1,1)) = {l1}, expected about 0.0798"));
    }
    check(64, -2.0..2.0f64, |delta| {
        let (l1, _) = compare_densities(&unit_gaussian(0.0), &unit_gaussian(delta)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let exact = shifted_gaussian_l1(delta);
        prop_assert!((l1 - exact).abs() <= 1e-3, "delta {delta}: {l1} vs {exact}");
        Ok(())
    })
}
