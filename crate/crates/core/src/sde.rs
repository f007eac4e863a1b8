//! Euler–Maruyama simulation of the state/observation pair
//!
//! ```text
//! dX = u_t(X, ζ(t, Y)) dt + σ_t(X) dW,   dY = h(X) dt + dV,   Y₀ = 0.
//! ```

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::construct::FilterProblem;
use crate::error::{Error, Result};
use crate::expfam::{self, fmt_f64, CanonicalParams, QuadConfig, SufficientStats};
use crate::expr::{CompiledExpr, Expr};

pub const BLOWUP_THRESHOLD: f64 = 1e6;
pub const SAMPLER_NODES: usize = 8193;

/// Named random streams derived from one master seed. Each `(seed, stream)`
/// pair is an independent ChaCha8 keystream, so adding consumers never
/// shifts the draws of existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    StateNoise = 1,
    ObsNoise = 2,
    Initial = 3,
    Particles = 4,
    Resampling = 5,
    ParticleInit = 6,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::StateNoise => "state-noise",
            Stream::ObsNoise => "obs-noise",
            Stream::Initial => "initial",
            Stream::Particles => "particles",
            Stream::Resampling => "resampling",
            Stream::ParticleInit => "particle-init",
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed of Monte-Carlo replicate `index`.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(index)
}

/// Draws from a tabulated density by linear-interpolation inversion of its
/// cumulative trapezoid.
#[derive(Debug, Clone)]
pub struct GridSampler {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridSampler {
    pub fn from_family(stats: &SufficientStats, params: &CanonicalParams) -> Result<Self> {
        let sup = expfam::support(stats, params, &QuadConfig::default())?;
        let grid = expfam::to_grid(stats, params, (-sup.half_width, sup.half_width), SAMPLER_NODES)?;
        let dx = grid.spacing();
        let q = grid.values();
        let mut cdf = Vec::with_capacity(q.len());
        cdf.push(0.0);
        for k in 1..q.len() {
            cdf.push(cdf[k - 1] + 0.5 * dx * (q[k - 1] + q[k]));
        }
        let total = *cdf.last().expect("grid is nonempty");
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidGrid(format!("initial density has mass {total}")));
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(GridSampler { nodes: grid.nodes().to_vec(), cdf })
    }

    /// Quantile function at `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.nodes[k - 1] + w * (self.nodes[k] - self.nodes[k - 1])
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// Law of `X₀`.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    Point(f64),
    Grid(GridSampler),
}

impl InitialLaw {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InitialLaw::Point(x) => *x,
            InitialLaw::Grid(s) => s.draw(rng),
        }
    }
}

/// Coefficients of a scalar state-space model.
pub trait StateSpaceModel {
    /// State drift at `(x, t)` given the current observation `Y_t = y`.
    fn drift(&self, x: f64, t: f64, y: f64) -> f64;
    /// `a_t(x) = σ_t(x)²`.
    fn diffusion(&self, x: f64, t: f64) -> f64;
    fn observation(&self, x: f64) -> f64;
    fn initial_law(&self) -> Result<InitialLaw>;
    /// `log q₀(x)` up to an additive constant, when the law has a density.
    fn initial_log_density(&self, _x: f64) -> Option<f64> {
        None
    }
}

impl StateSpaceModel for FilterProblem {
    #[inline]
    fn drift(&self, x: f64, t: f64, y: f64) -> f64 {
        self.drift_at(x, t, y)
    }

    #[inline]
    fn diffusion(&self, x: f64, t: f64) -> f64 {
        self.drift.diffusion(x, t)
    }

    #[inline]
    fn observation(&self, x: f64) -> f64 {
        FilterProblem::observation(self, x)
    }

    fn initial_law(&self) -> Result<InitialLaw> {
        Ok(InitialLaw::Grid(GridSampler::from_family(&self.stats, &self.initial)?))
    }

    fn initial_log_density(&self, x: f64) -> Option<f64> {
        Some(self.stats.exponent(&self.initial.zeta, x) + self.initial.beta)
    }
}

/// A model given directly by expressions; `drift` may use `t` but not `Y`.
#[derive(Debug, Clone)]
pub struct ExplicitModel {
    drift: CompiledExpr,
    diffusion: CompiledExpr,
    observation: CompiledExpr,
    initial: InitialLaw,
    log_density: Option<CompiledExpr>,
}

impl ExplicitModel {
    pub fn new(drift: &Expr, diffusion: &Expr, observation: &Expr, initial: InitialLaw) -> Self {
        ExplicitModel {
            drift: drift.compile(),
            diffusion: diffusion.compile(),
            observation: observation.compile(),
            initial,
            log_density: None,
        }
    }

    /// Attach `log q₀` (used by grid solvers; sampling still uses `initial`).
    pub fn with_log_density(mut self, log_q0: &Expr) -> Self {
        self.log_density = Some(log_q0.compile());
        self
    }
}

impl StateSpaceModel for ExplicitModel {
    fn drift(&self, x: f64, t: f64, _y: f64) -> f64 {
        self.drift.eval(x, t)
    }

    fn diffusion(&self, x: f64, t: f64) -> f64 {
        self.diffusion.eval(x, t)
    }

    fn observation(&self, x: f64) -> f64 {
        self.observation.eval(x, 0.0)
    }

    fn initial_law(&self) -> Result<InitialLaw> {
        Ok(self.initial.clone())
    }

    fn initial_log_density(&self, x: f64) -> Option<f64> {
        self.log_density.as_ref().map(|e| e.eval(x, 0.0))
    }
}

/// How `X₀` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialCondition {
    Fixed(f64),
    /// Sample from the model's initial law.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub initial: InitialCondition,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Self {
        SimConfig { dt, horizon, seed, initial: InitialCondition::Prior }
    }

    /// Number of steps `K = T/dt`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.dt <= self.horizon) || !self.horizon.is_finite() {
            return Err(Error::InvalidConfig(format!("need 0 < dt <= T, got dt = {}, T = {}", self.dt, self.horizon)));
        }
        let ratio = self.horizon / self.dt;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("T/dt = {ratio} is not an integer")));
        }
        Ok(k as usize)
    }
}

/// A simulated trajectory on `t_k = k·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dt: f64,
    pub seed: u64,
}

impl Path {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    /// `Y_{k+1} − Y_k`.
    pub fn increment(&self, k: usize) -> f64 {
        self.y[k + 1] - self.y[k]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,y")?;
        for k in 0..self.len() {
            writeln!(w, "{},{},{}", fmt_f64(self.times[k]), fmt_f64(self.x[k]), fmt_f64(self.y[k]))?;
        }
        Ok(())
    }
}

/// Simulate one path with noise from the `state-noise` and `obs-noise`
/// streams of `config.seed`.
pub fn simulate<M: StateSpaceModel + ?Sized>(model: &M, config: &SimConfig) -> Result<Path> {
    let law = match config.initial {
        InitialCondition::Fixed(x) => InitialLaw::Point(x),
        InitialCondition::Prior => model.initial_law()?,
    };
    simulate_from(model, config, &law)
}

/// [`simulate`] with a pre-built initial law (avoids rebuilding the sampler
/// across replicates).
pub fn simulate_from<M: StateSpaceModel + ?Sized>(model: &M, config: &SimConfig, law: &InitialLaw) -> Result<Path> {
    let steps = config.steps()?;
    let x0 = law.draw(&mut stream_rng(config.seed, Stream::Initial));
    let mut w = stream_rng(config.seed, Stream::StateNoise);
    let mut v = stream_rng(config.seed, Stream::ObsNoise);
    euler_maruyama(model, x0, config.dt, steps, config.seed, |_| {
        (w.sample(StandardNormal), v.sample(StandardNormal))
    })
}

/// Simulate with caller-supplied standard-normal increments `(ξ_k, η_k)`.
pub fn simulate_driven<M: StateSpaceModel + ?Sized>(model: &M, x0: f64, dt: f64, xi: &[f64], eta: &[f64]) -> Result<Path> {
    if xi.len() != eta.len() {
        return Err(Error::InvalidConfig(format!("noise lengths differ: {} vs {}", xi.len(), eta.len())));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    euler_maruyama(model, x0, dt, xi.len(), 0, |k| (xi[k], eta[k]))
}

fn euler_maruyama<M, F>(model: &M, x0: f64, dt: f64, steps: usize, seed: u64, mut noise: F) -> Result<Path>
where
    M: StateSpaceModel + ?Sized,
    F: FnMut(usize) -> (f64, f64),
{
    let sqrt_dt = dt.sqrt();
    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (x0, 0.0);
    times.push(0.0);
    xs.push(x);
    ys.push(y);
    for k in 0..steps {
        let t = k as f64 * dt;
        let (xi, eta) = noise(k);
        let sigma = model.diffusion(x, t).max(0.0).sqrt();
        let x_next = x + model.drift(x, t, y) * dt + sigma * sqrt_dt * xi;
        y += model.observation(x) * dt + sqrt_dt * eta;
        x = x_next;
        if !(x.abs() <= BLOWUP_THRESHOLD) {
            return Err(Error::BlowUp { step: k + 1, value: x.abs() });
        }
        times.push((k + 1) as f64 * dt);
        xs.push(x);
        ys.push(y);
    }
    Ok(Path { times, x: xs, y: ys, dt, seed })
}

/// One draw from the normalized family member `q(·; ζ, β)`.
pub fn sample_initial(stats: &SufficientStats, params: &CanonicalParams, seed: u64) -> Result<f64> {
    let sampler = GridSampler::from_family(stats, params)?;
    Ok(sampler.draw(&mut stream_rng(seed, Stream::Initial)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{extend_family, StatOrigin};
    use crate::expr::parse;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn kalman(mu0: f64, v0: f64) -> FilterProblem {
        let stats = extend_family(vec![], Expr::X).unwrap();
        let init = CanonicalParams::new(vec![mu0 / v0, -0.5 / v0], 0.0);
        FilterProblem::new(Expr::Const(1.0), stats, init, 1.0).unwrap()
    }

    fn mean_std(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn no_dynamics_is_constant() {
        let zero = Expr::Const(0.0);
        let model = ExplicitModel::new(&zero, &zero, &zero, InitialLaw::Point(1.0));
        let path = simulate(&model, &SimConfig::new(0.01, 1.0, 5)).unwrap();
        assert_eq!(path.len(), 101);
        assert!(path.x.iter().all(|&x| x == 1.0));
        // With h = 0 the observation is pure noise, not identically 0.
        let quiet = simulate_driven(&model, 1.0, 0.01, &[0.0; 100], &[0.0; 100]).unwrap();
        assert!(quiet.y.iter().all(|&y| y == 0.0));
        assert_eq!(quiet.x, path.x);
    }

    #[test]
    fn fixed_seed_is_bitwise_deterministic() {
        let p = kalman(0.0, 1.0);
        let cfg = SimConfig::new(1e-3, 1.0, 42);
        let a = simulate(&p, &cfg).unwrap();
        let b = simulate(&p, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.y[0], 0.0);
        let c = simulate(&p, &SimConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0.3, 1.0, 0).steps().is_err());
        assert!(SimConfig::new(0.0, 1.0, 0).steps().is_err());
        assert!(SimConfig::new(2.0, 1.0, 0).steps().is_err());
        assert_eq!(SimConfig::new(1e-3, 1.0, 0).steps().unwrap(), 1000);
        assert_eq!(SimConfig::new(0.1, 0.3, 0).steps().unwrap(), 3);
    }

    #[test]
    fn stiff_drift_reports_blowup() {
        let stats = extend_family(vec![], parse("x^3").unwrap()).unwrap();
        let p = FilterProblem::new(Expr::Const(1.0), stats, CanonicalParams::new(vec![0.0, -1.0], 0.0), 1.0).unwrap();
        let cfg = SimConfig { dt: 0.1, horizon: 1.0, seed: 1, initial: InitialCondition::Fixed(3.0) };
        assert!(matches!(simulate(&p, &cfg), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn gaussian_sampling_passes_ks() {
        let stats = extend_family(vec![], Expr::X).unwrap();
        let (mu, v) = (0.4, 2.0);
        let params = CanonicalParams::new(vec![mu / v, -0.5 / v], 0.0);
        let sampler = GridSampler::from_family(&stats, &params).unwrap();
        let mut rng = stream_rng(11, Stream::Initial);
        let n = 10_000;
        let mut draws: Vec<f64> = (0..n).map(|_| sampler.draw(&mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        let normal = Normal::new(mu, v.sqrt()).unwrap();
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal.cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / (n as f64).sqrt(), "KS = {ks}");
    }

    #[test]
    fn symmetric_sextic_sampling() {
        let stats = SufficientStats::from_exprs(vec![(parse("x^6").unwrap(), StatOrigin::Supplied)]).unwrap();
        let params = CanonicalParams::new(vec![-1.0], 0.0);
        let sampler = GridSampler::from_family(&stats, &params).unwrap();
        let mut rng = stream_rng(3, Stream::Initial);
        let draws: Vec<f64> = (0..10_000).map(|_| sampler.draw(&mut rng)).collect();
        let (m, s) = mean_std(&draws);
        assert!(m.abs() < 3.0 * s / 100.0, "mean {m}");
        assert_eq!(sample_initial(&stats, &params, 9).unwrap(), sample_initial(&stats, &params, 9).unwrap());
    }

    #[test]
    fn observation_increments_have_variance_dt() {
        let p = kalman(0.0, 1.0);
        let cfg = SimConfig { dt: 1e-3, horizon: 200.0, seed: 8, initial: InitialCondition::Prior };
        let path = simulate(&p, &cfg).unwrap();
        let resid: Vec<f64> = (0..path.steps()).map(|k| path.increment(k) - path.x[k] * path.dt).collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        assert!((var / path.dt - 1.0).abs() < 0.05, "{}", var / path.dt);
    }

    /// Coarsen standard-normal increments by summing pairs.
    fn coarsen(z: &[f64]) -> Vec<f64> {
        z.chunks(2).map(|c| (c[0] + c[1]) / std::f64::consts::SQRT_2).collect()
    }

    #[test]
    fn weak_order_one() {
        // X₀ far from the prior mean so E[X_T] carries a visible O(dt) bias;
        // with X₀ = μ₀ the Euler mean is exactly constant.
        let p = kalman(0.0, 0.25);
        let paths = 10_000;
        let fine_steps = 1000;
        let mut sums = [0.0f64; 3];
        for r in 0..paths {
            let mut wr = stream_rng(replicate_seed(1000, r), Stream::StateNoise);
            let mut vr = stream_rng(replicate_seed(1000, r), Stream::ObsNoise);
            let xi: Vec<f64> = (0..fine_steps).map(|_| wr.sample(StandardNormal)).collect();
            let eta: Vec<f64> = (0..fine_steps).map(|_| vr.sample(StandardNormal)).collect();
            let (xi2, eta2) = (coarsen(&xi), coarsen(&eta));
            let (xi4, eta4) = (coarsen(&xi2), coarsen(&eta2));
            sums[0] += *simulate_driven(&p, 3.0, 4e-3, &xi4, &eta4).unwrap().x.last().unwrap();
            sums[1] += *simulate_driven(&p, 3.0, 2e-3, &xi2, &eta2).unwrap().x.last().unwrap();
            sums[2] += *simulate_driven(&p, 3.0, 1e-3, &xi, &eta).unwrap().x.last().unwrap();
        }
        let m: Vec<f64> = sums.iter().map(|s| s / paths as f64).collect();
        let ratio = (m[2] - m[1]) / (m[1] - m[0]);
        assert!((0.3..=0.7).contains(&ratio), "means {m:?}, ratio {ratio}");
    }

    #[test]
    fn monte_carlo_mean_matches_fine_reference() {
        let p = kalman(0.0, 1.0);
        let law = p.initial_law().unwrap();
        let terminal = |dt: f64, n: u64, master: u64| -> Vec<f64> {
            (0..n)
                .map(|r| {
                    let cfg = SimConfig::new(dt, 1.0, replicate_seed(master, r));
                    *simulate_from(&p, &cfg, &law).unwrap().x.last().unwrap()
                })
                .collect()
        };
        let coarse = terminal(1e-3, 10_000, 0);
        let reference = terminal(1e-4, 100_000, 1_000_000);
        let (m, s) = mean_std(&coarse);
        let (m_ref, _) = mean_std(&reference);
        assert!((m - m_ref).abs() <= 3.0 * s / 100.0, "{m} vs reference {m_ref} (std {s})");
    }
}
