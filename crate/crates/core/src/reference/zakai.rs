//! Splitting scheme for the unnormalized filter density on a fixed grid:
//! Girsanov correction followed by backward-Euler steps of the
//! Fokker–Planck operator `−∂ₓ(u q) + ½∂ₓ²(a q)` in conservative form.

use serde::{Deserialize, Serialize};

use super::log_likelihood;
use crate::construct::FilterProblem;
use crate::error::{Error, Result};
use crate::expfam::{self, DensityGrid, QuadConfig};
use crate::sde::{Path, StateSpaceModel};

const BOUNDARY_CELLS: usize = 5;
const BOUNDARY_MASS_LIMIT: f64 = 1e-6;
const PECLET_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZakaiConfig {
    pub bounds: (f64, f64),
    pub dx: f64,
    /// Implicit prediction substeps per observation step.
    #[serde(default = "one")]
    pub substeps: usize,
    /// Path step indices at which the grid is kept.
    #[serde(default)]
    pub snapshot_steps: Vec<usize>,
}

fn one() -> usize {
    1
}

/// Unnormalized density `exp(log_scale) · grid` at `time`.
#[derive(Debug, Clone)]
pub struct ZakaiState {
    pub grid: DensityGrid,
    pub time: f64,
    pub log_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZakaiSummary {
    pub t: f64,
    pub mean: f64,
    pub variance: f64,
    /// `log ∫ q dx` including the tracked scale.
    pub log_mass: f64,
}

#[derive(Debug, Clone)]
pub struct ZakaiOutput {
    pub summaries: Vec<ZakaiSummary>,
    pub states: Vec<(usize, ZakaiState)>,
    /// Face-steps on which the advective flux was upwinded.
    pub upwind_faces: usize,
    pub max_peclet: f64,
    /// Total clipped negative mass relative to the mass at each step.
    pub clipped_mass: f64,
    pub warnings: Vec<String>,
}

struct Grid {
    lower: f64,
    upper: f64,
    dx: f64,
    nodes: Vec<f64>,
}

impl Grid {
    fn new(config: &ZakaiConfig) -> Result<Self> {
        let (lower, upper) = config.bounds;
        if !(upper > lower) || !(config.dx > 0.0) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidConfig(format!("bad Zakai grid {:?} with dx = {}", config.bounds, config.dx)));
        }
        if config.substeps == 0 {
            return Err(Error::InvalidConfig("substeps must be at least 1".into()));
        }
        let cells = ((upper - lower) / config.dx).round().max(1.0) as usize;
        let n = cells + 1;
        if n < expfam::MIN_GRID_NODES {
            return Err(Error::GridTooSmall { min: expfam::MIN_GRID_NODES, got: n });
        }
        let dx = (upper - lower) / cells as f64;
        Ok(Grid { lower, upper, dx, nodes: (0..n).map(|i| lower + dx * i as f64).collect() })
    }
}

fn summary(grid: &Grid, q: &[f64], t: f64, log_scale: f64) -> ZakaiSummary {
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (&x, &v) in grid.nodes.iter().zip(q) {
        m0 += v;
        m1 += v * x;
        m2 += v * x * x;
    }
    let mean = m1 / m0;
    ZakaiSummary { t, mean, variance: (m2 / m0 - mean * mean).max(0.0), log_mass: (m0 * grid.dx).ln() + log_scale }
}

fn check_boundary(q: &[f64], step: usize) -> Result<()> {
    let total: f64 = q.iter().sum();
    let n = q.len();
    let edge: f64 = q[..BOUNDARY_CELLS].iter().chain(&q[n - BOUNDARY_CELLS..]).sum();
    let fraction = edge / total;
    if !(fraction <= BOUNDARY_MASS_LIMIT) {
        return Err(Error::BoundaryMassLoss { step, fraction });
    }
    Ok(())
}

/// Divide by the maximum and fold it into the log-scale.
fn rescale(q: &mut [f64], log_scale: &mut f64) {
    let max = q.iter().copied().fold(0.0, f64::max);
    if max > 0.0 && max.is_finite() {
        q.iter_mut().for_each(|v| *v /= max);
        *log_scale += max.ln();
    }
}

/// Solve `sub·q_{i−1} + diag·q_i + sup·q_{i+1} = rhs` in place.
fn thomas(sub: &[f64], diag: &mut [f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    for i in 1..n {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
    }
}

/// Solve the Zakai equation along `path` on a uniform grid with zero
/// boundary values.
///
/// Per observation step: multiply by `exp[h ΔY_k − ½h²Δt]`, then advance
/// `substeps` backward-Euler steps with the drift at `(t, Y_k)`. Faces
/// with `|u|Δx/a > 2` use the upwind advective flux.
pub fn zakai_solve<M: StateSpaceModel + ?Sized>(model: &M, path: &Path, config: &ZakaiConfig) -> Result<ZakaiOutput> {
    let grid = Grid::new(config)?;
    let n = grid.nodes.len();
    let dx = grid.dx;
    let log_q0: Vec<f64> = grid
        .nodes
        .iter()
        .map(|&x| model.initial_log_density(x))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidConfig("Zakai solver needs an initial density".into()))?;
    let mut log_scale = log_q0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = log_q0.iter().map(|l| (l - log_scale).exp()).collect();
    q[0] = 0.0;
    q[n - 1] = 0.0;
    check_boundary(&q, 0)?;

    let h: Vec<f64> = grid.nodes.iter().map(|&x| model.observation(x)).collect();
    let mut out = ZakaiOutput {
        summaries: vec![summary(&grid, &q, 0.0, log_scale)],
        states: Vec::new(),
        upwind_faces: 0,
        max_peclet: 0.0,
        clipped_mass: 0.0,
        warnings: Vec::new(),
    };
    let snapshot = |q: &[f64], t: f64, log_scale: f64| -> Result<ZakaiState> {
        Ok(ZakaiState { grid: DensityGrid::new(grid.lower, grid.upper, q.to_vec())?, time: t, log_scale })
    };
    if config.snapshot_steps.contains(&0) {
        out.states.push((0, snapshot(&q, 0.0, log_scale)?));
    }

    let m = n - 2;
    let (mut u, mut a) = (vec![0.0; n], vec![0.0; n]);
    // Face i+½ flux F = A[i]·q_i + B[i]·q_{i+1}.
    let (mut fa, mut fb) = (vec![0.0; n - 1], vec![0.0; n - 1]);
    let (mut sub, mut diag, mut sup) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let tau = path.dt / config.substeps as f64;
    let mut loglik = vec![0.0; n];

    for k in 0..path.steps() {
        let dy = path.increment(k);
        for (l, &hi) in loglik.iter_mut().zip(&h) {
            *l = log_likelihood(hi, dy, path.dt);
        }
        let lmax = loglik[1..n - 1].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (v, &l) in q.iter_mut().zip(&loglik) {
            *v *= (l - lmax).exp();
        }
        log_scale += lmax;

        let y = path.y[k];
        for s in 0..config.substeps {
            let t = path.times[k] + tau * (s + 1) as f64;
            for i in 0..n {
                u[i] = model.drift(grid.nodes[i], t, y);
                a[i] = model.diffusion(grid.nodes[i], t);
            }
            for f in 0..n - 1 {
                let uf = 0.5 * (u[f] + u[f + 1]);
                let af = 0.5 * (a[f] + a[f + 1]);
                let peclet = uf.abs() * dx / af;
                out.max_peclet = out.max_peclet.max(peclet);
                let (da, db) = (0.5 * a[f] / dx, 0.5 * a[f + 1] / dx);
                if peclet > PECLET_LIMIT {
                    out.upwind_faces += 1;
                    if uf > 0.0 {
                        fa[f] = u[f] + da;
                        fb[f] = -db;
                    } else {
                        fa[f] = da;
                        fb[f] = u[f + 1] - db;
                    }
                } else {
                    fa[f] = 0.5 * u[f] + da;
                    fb[f] = 0.5 * u[f + 1] - db;
                }
            }
            // Interior node i (row i−1): dq_i/dt = (F_{i−½} − F_{i+½})/dx.
            let r = tau / dx;
            for i in 1..n - 1 {
                let row = i - 1;
                sub[row] = -r * fa[i - 1];
                diag[row] = 1.0 - r * (fb[i - 1] - fa[i]);
                sup[row] = r * fb[i];
            }
            thomas(&sub, &mut diag, &sup, &mut q[1..n - 1]);
        }

        let mut clipped = 0.0;
        for v in q.iter_mut() {
            if *v < 0.0 {
                clipped -= *v;
                *v = 0.0;
            }
        }
        let total: f64 = q.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::BoundaryMassLoss { step: k + 1, fraction: 1.0 });
        }
        out.clipped_mass += clipped / total;
        rescale(&mut q, &mut log_scale);
        check_boundary(&q, k + 1)?;

        let t = path.times[k + 1];
        out.summaries.push(summary(&grid, &q, t, log_scale));
        if config.snapshot_steps.contains(&(k + 1)) {
            out.states.push((k + 1, snapshot(&q, t, log_scale)?));
        }
    }
    if out.upwind_faces > 0 {
        out.warnings.push(format!(
            "CFLWarning: advection Peclet number reached {:.3} (> {PECLET_LIMIT}); upwinding engaged on {} face-steps",
            out.max_peclet, out.upwind_faces
        ));
    }
    Ok(out)
}

/// Union of `mean ± n_std·std` of the closed-form filter along the path.
pub fn auto_bounds(problem: &FilterProblem, path: &Path, n_std: f64) -> Result<(f64, f64)> {
    let stride = (path.steps() / 64).max(1);
    let mut steps: Vec<usize> = (0..=path.steps()).step_by(stride).collect();
    if steps.last() != Some(&path.steps()) {
        steps.push(path.steps());
    }
    let cfg = QuadConfig::default();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in steps {
        let params = problem.closed_form(path.times[k], path.y[k]);
        let m = expfam::moment_summary(&problem.stats, &params, &cfg)?;
        let sd = m.variance.sqrt();
        lo = lo.min(m.mean - n_std * sd);
        hi = hi.max(m.mean + n_std * sd);
    }
    Ok((lo, hi))
}
