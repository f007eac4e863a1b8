//! Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if
//! any criterion fails.

mod support;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fdfilter::construct::{build_drift, param_flow, FilterProblem};
use fdfilter::expfam::{check_integrability, extend_family, CanonicalParams, DensityGrid};
use fdfilter::expr::{parse, Expr};
use fdfilter::harness::{closed_form_moments, compare_densities, preset};
use fdfilter::reference::{
    auto_bounds, dmz_residual, dmz_residual_with, particle_filter, random_probes, zakai_solve, ParticleConfig,
    PerturbedDrift, ResidualReport, ZakaiConfig,
};
use fdfilter::sde::{simulate, SimConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

type BoxError = Box<dyn std::error::Error>;

fn problem(name: &str) -> Result<FilterProblem, BoxError> {
    let config = preset(name).ok_or_else(|| format!("missing preset {name}"))?;
    Ok(config.build_problem()?)
}

/// Kalman–Bucy posterior for `dX = dW`, `dY = X dt + dV` from `N(μ₀, v₀)`.
fn kalman(mu0: f64, v0: f64, t: f64, y: f64) -> (f64, f64) {
    ((mu0 + y * v0) / (1.0 + v0 * t), v0 / (1.0 + v0 * t))
}

fn criterion_1() -> Result<Outcome, BoxError> {
    let p = problem("linear-kalman")?;
    let (mut err_mean, mut err_var, mut checked) = (0.0f64, 0.0f64, 0usize);
    for seed in 0..10 {
        let path = simulate(&p, &SimConfig::new(1e-3, 1.0, seed))?;
        for k in 0..path.len() {
            let (t, y) = (path.times[k], path.y[k]);
            let (mean, var) = closed_form_moments(&p.stats, &p.closed_form(t, y))?;
            let (m, v) = kalman(0.0, 1.0, t, y);
            err_mean = err_mean.max((mean - m).abs());
            err_var = err_var.max((var - v).abs());
            checked += 1;
        }
    }
    let pass = err_mean <= 1e-12 && err_var <= 1e-12;
    Ok(Outcome {
        pass,
        detail: format!("{checked} steps on 10 paths: max |mean err| {err_mean:.3e}, max |var err| {err_var:.3e} (tol 1e-12)"),
    })
}

fn criterion_2() -> Result<Outcome, BoxError> {
    let p = problem("cubic-sensor")?;
    let drift = build_drift(&p.a, &p.stats)?;
    let flow = param_flow(&p.initial);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (x, t, y) = (rng.random_range(-2.0..=2.0), rng.random_range(0.0..=1.0), rng.random_range(-3.0..=3.0));
        let u = drift.value(x, t, &flow.at(t, y).zeta);
        let expected = 1.5 * y * x * x - 3.0 * (1.0 + 0.5 * t) * x.powi(5);
        worst = worst.max((u - expected).abs());
    }
    Ok(Outcome { pass: worst <= 1e-12, detail: format!("1000 probes: max |u - u_exact| {worst:.3e} (tol 1e-12)") })
}

const RESIDUAL_Y: [f64; 3] = [-1.0, 0.0, 1.0];

fn worst_residual(p: &FilterProblem, seed: u64) -> Result<f64, BoxError> {
    let probes = random_probes(seed, 200, (-2.0, 2.0), (0.0, p.horizon));
    let mut worst = 0.0f64;
    for y in RESIDUAL_Y {
        worst = worst.max(dmz_residual(p, &p.initial, &probes, y)?.max());
    }
    Ok(worst)
}

/// Random `c` of degree ≤ 4, `h ∈ {x, x², x³}`, positive `a`, integrable `ζ₀`.
fn random_family(rng: &mut ChaCha8Rng) -> FilterProblem {
    loop {
        let degree = rng.random_range(1..=4);
        let coeffs: Vec<f64> = (0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect();
        let powers: Vec<Expr> = (0..=degree as u32).map(|k| Expr::pow(Expr::X, k)).collect();
        let c = Expr::linear_combination(&coeffs, &powers);
        let h = Expr::pow(Expr::X, rng.random_range(1..=3));
        let Ok(stats) = extend_family(vec![c], h) else { continue };
        let zeta: Vec<f64> = (0..stats.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let params = CanonicalParams::new(zeta, rng.random_range(-1.0..1.0));
        if !check_integrability(&stats, &params).is_integrable() {
            continue;
        }
        let a = format!("1 + {}*x^2 + {}*t", rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
        if let Ok(p) = FilterProblem::new(parse(&a).expect("diffusion parses"), stats, params, 1.0) {
            return p;
        }
    }
}

fn criterion_3() -> Result<Outcome, BoxError> {
    let mut presets = 0.0f64;
    for name in ["cubic-sensor", "linear-kalman", "linear-nonconstant-a"] {
        presets = presets.max(worst_residual(&problem(name)?, 3)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut random = 0.0f64;
    for i in 0..20 {
        random = random.max(worst_residual(&random_family(&mut rng), 100 + i)?);
    }
    let mut perturbed = f64::INFINITY;
    for name in ["cubic-sensor", "linear-kalman"] {
        let p = problem(name)?;
        let bad = PerturbedDrift::linear(&p.drift, 0.01);
        let probes = random_probes(4, 200, (-2.0, 2.0), (0.0, p.horizon));
        let r: ResidualReport = dmz_residual_with(&p, &bad, &p.initial, &probes, 0.5)?;
        perturbed = perturbed.min(r.max());
    }
    let pass = presets <= 1e-9 && random <= 1e-9 && perturbed >= 1e-4;
    Ok(Outcome {
        pass,
        detail: format!(
            "presets {presets:.3e}, 20 random families {random:.3e} (tol 1e-9); perturbed drift {perturbed:.3e} (need >= 1e-4)"
        ),
    })
}

fn criterion_4() -> Result<Outcome, BoxError> {
    let dt = 1e-3;
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["linear-kalman", "cubic-sensor"] {
        let p = problem(name)?;
        let path = simulate(&p, &SimConfig::new(dt, 1.0, 4))?;
        let steps: Vec<usize> = [0.25, 0.5, 1.0].iter().map(|t: &f64| (t / dt).round() as usize).collect();
        let pf = particle_filter(&p, &path, &ParticleConfig { particles: 100_000, seed: 4, snapshot_steps: vec![] })?;
        let mut worst_ratio = 0.0f64;
        for k in steps {
            let s = pf.summaries[k];
            let (mean, _) = closed_form_moments(&p.stats, &p.closed_form(path.times[k], path.y[k]))?;
            let tol = 3.0 * s.stderr() + 5.0 * dt;
            worst_ratio = worst_ratio.max((s.mean - mean).abs() / tol);
            pass &= (s.mean - mean).abs() <= tol;
        }
        parts.push(format!("{name}: max |pf - cf| / (3 se + 5 dt) = {worst_ratio:.3}"));
    }
    Ok(Outcome { pass, detail: format!("N = 1e5, dt = 1e-3 at t = 0.25, 0.5, 1: {} (need <= 1)", parts.join("; ")) })
}

fn zakai_l1(name: &str, fixed_bounds: Option<(f64, f64)>) -> Result<f64, BoxError> {
    let dt = 1e-4;
    let p = problem(name)?;
    let path = simulate(&p, &SimConfig::new(dt, 1.0, 5))?;
    let last = path.steps();
    let bounds = match fixed_bounds {
        Some(b) => b,
        None => auto_bounds(&p, &path, 8.0)?,
    };
    let zk = zakai_solve(&p, &path, &ZakaiConfig { bounds, dx: 1e-2, substeps: 1, snapshot_steps: vec![last] })?;
    let grid = &zk.states.iter().find(|(k, _)| *k == last).ok_or("missing final Zakai state")?.1.grid;
    let params = p.closed_form(path.times[last], path.y[last]);
    let peak = grid.nodes().iter().map(|&x| p.stats.exponent(&params.zeta, x)).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = grid.bounds();
    let exact = DensityGrid::from_fn(lo, hi, grid.len(), |x| (p.stats.exponent(&params.zeta, x) - peak).exp())?;
    Ok(compare_densities(grid, &exact)?.0)
}

fn criterion_5() -> Result<Outcome, BoxError> {
    let linear = zakai_l1("linear-kalman", None)?;
    let cubic = zakai_l1("cubic-sensor", Some((-3.0, 3.0)))?;
    Ok(Outcome {
        pass: linear <= 1e-2 && cubic <= 2e-2,
        detail: format!("L1 at T = 1 (dx = 1e-2, dt = 1e-4): linear {linear:.3e} (tol 1e-2), cubic on [-3, 3] {cubic:.3e} (tol 2e-2)"),
    })
}

fn criterion_6() -> Result<Outcome, BoxError> {
    let mut failures = Vec::new();
    for (name, suite) in support::SUITES {
        if let Err(e) = suite() {
            failures.push(format!("{name}: {e}"));
        }
    }
    let detail = if failures.is_empty() {
        format!("{} suites passed", support::SUITES.len())
    } else {
        format!("{} of {} suites failed: {}", failures.len(), support::SUITES.len(), failures.join(" | "))
    };
    Ok(Outcome { pass: failures.is_empty(), detail })
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome, BoxError>, Option<Duration>); 6] = [
        ("linear-kalman closed-form exactness", criterion_1, Some(Duration::from_secs(1))),
        ("cubic-sensor drift reproduction", criterion_2, Some(Duration::from_secs(1))),
        ("DMZ residual oracle", criterion_3, Some(Duration::from_secs(10))),
        ("particle filter equivalence", criterion_4, Some(Duration::from_secs(120))),
        ("Zakai grid equivalence", criterion_5, Some(Duration::from_secs(300))),
        ("property suites", criterion_6, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let limit_text = limit.map_or(String::new(), |l| format!(", limit {:.0} s", l.as_secs_f64()));
        let (pass, detail) = match outcome {
            Ok(o) => (o.pass && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} [{}] {name}: {detail}; runtime {:.2} s{limit_text}", i + 1, elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 6 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
