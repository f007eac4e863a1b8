use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::log_likelihood;
use crate::error::{Error, Result};
use crate::expfam::fmt_f64;
use crate::sde::{stream_rng, Path, StateSpaceModel, Stream};

pub const MIN_PARTICLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub particles: usize,
    pub seed: u64,
    /// Path step indices at which the full ensemble is kept.
    #[serde(default)]
    pub snapshot_steps: Vec<usize>,
}

/// Weighted sample representing the filter at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub ess: f64,
}

impl ParticleEnsemble {
    pub fn weights(&self) -> Vec<f64> {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weights.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    pub fn mean(&self) -> f64 {
        self.weights().iter().zip(&self.particles).map(|(w, x)| w * x).sum()
    }

    pub fn variance(&self) -> f64 {
        let w = self.weights();
        let m: f64 = w.iter().zip(&self.particles).map(|(w, x)| w * x).sum();
        w.iter().zip(&self.particles).map(|(w, x)| w * (x - m).powi(2)).sum()
    }

    /// Weighted histogram on `bins` equal cells of `[lower, upper]`,
    /// normalized as a density (mass outside the range is dropped).
    pub fn histogram(&self, lower: f64, upper: f64, bins: usize) -> Vec<f64> {
        let width = (upper - lower) / bins as f64;
        let mut out = vec![0.0; bins];
        for (w, &x) in self.weights().iter().zip(&self.particles) {
            let b = ((x - lower) / width).floor();
            if b >= 0.0 && (b as usize) < bins {
                out[b as usize] += w;
            }
        }
        out.iter_mut().for_each(|v| *v /= width);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub t: f64,
    pub mean: f64,
    pub variance: f64,
    pub ess: f64,
}

impl FilterSummary {
    /// Monte-Carlo standard error of the mean.
    pub fn stderr(&self) -> f64 {
        (self.variance / self.ess).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ParticleOutput {
    /// One entry per path time `t_0, …, t_K`.
    pub summaries: Vec<FilterSummary>,
    pub snapshots: Vec<(usize, ParticleEnsemble)>,
    pub resamples: usize,
}

fn summarize(t: f64, particles: &[f64], log_weights: &[f64], ess: f64) -> FilterSummary {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (&x, &l) in particles.iter().zip(log_weights) {
        let w = (l - max).exp();
        s0 += w;
        s1 += w * x;
        s2 += w * x * x;
    }
    let mean = s1 / s0;
    FilterSummary { t, mean, variance: (s2 / s0 - mean * mean).max(0.0), ess }
}

/// Bootstrap particle filter along an observed path.
///
/// At step `k` each particle is reweighted by `exp[h(x_k)ΔY_k − ½h(x_k)²Δt]`,
/// the ensemble is resampled systematically when `ESS < N/2`, and particles
/// move by one Euler step with the same drift as the state. The reported
/// ESS for `t_{k+1}` is the one before resampling.
pub fn particle_filter<M: StateSpaceModel + ?Sized>(model: &M, path: &Path, config: &ParticleConfig) -> Result<ParticleOutput> {
    let n = config.particles;
    if n < MIN_PARTICLES {
        return Err(Error::InvalidConfig(format!("need at least {MIN_PARTICLES} particles, got {n}")));
    }
    let dt = path.dt;
    let sqrt_dt = dt.sqrt();
    let law = model.initial_law()?;
    let mut init_rng = stream_rng(config.seed, Stream::ParticleInit);
    let mut noise = stream_rng(config.seed, Stream::Particles);
    let mut resample_rng = stream_rng(config.seed, Stream::Resampling);

    let mut x: Vec<f64> = (0..n).map(|_| law.draw(&mut init_rng)).collect();
    let mut lw = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut summaries = Vec::with_capacity(path.len());
    let mut snapshots = Vec::new();
    let mut resamples = 0;

    summaries.push(summarize(0.0, &x, &lw, n as f64));
    if config.snapshot_steps.contains(&0) {
        snapshots.push((0, ParticleEnsemble { particles: x.clone(), log_weights: lw.clone(), ess: n as f64 }));
    }

    for k in 0..path.steps() {
        let t = path.times[k];
        let dy = path.increment(k);
        for (l, &xi) in lw.iter_mut().zip(&x) {
            *l += log_likelihood(model.observation(xi), dy, dt);
        }
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::WeightDegeneracy { step: k + 1 });
        }
        let (mut total, mut sum_sq) = (0.0, 0.0);
        for (wi, &l) in w.iter_mut().zip(&lw) {
            *wi = (l - max).exp();
            total += *wi;
            sum_sq += *wi * *wi;
        }
        if !(sum_sq > 0.0) || !sum_sq.is_finite() {
            return Err(Error::WeightDegeneracy { step: k + 1 });
        }
        let ess = total * total / sum_sq;
        if ess < 0.5 * n as f64 {
            w.iter_mut().for_each(|wi| *wi /= total);
            systematic_resample(&w, &x, &mut scratch, resample_rng.random::<f64>());
            std::mem::swap(&mut x, &mut scratch);
            lw.iter_mut().for_each(|l| *l = 0.0);
            resamples += 1;
        } else {
            // Keep log-weights bounded.
            lw.iter_mut().for_each(|l| *l -= max);
        }

        let y = path.y[k];
        for xi in x.iter_mut() {
            let sigma = model.diffusion(*xi, t).max(0.0).sqrt();
            let z: f64 = noise.sample(StandardNormal);
            *xi += model.drift(*xi, t, y) * dt + sigma * sqrt_dt * z;
        }

        summaries.push(summarize(path.times[k + 1], &x, &lw, ess));
        if config.snapshot_steps.contains(&(k + 1)) {
            snapshots.push((k + 1, ParticleEnsemble { particles: x.clone(), log_weights: lw.clone(), ess }));
        }
    }
    Ok(ParticleOutput { summaries, snapshots, resamples })
}

/// Systematic resampling with one uniform offset `u ∈ [0, 1)`.
fn systematic_resample(weights: &[f64], from: &[f64], to: &mut [f64], u: f64) {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut cumulative = weights[0];
    let mut j = 0;
    for (i, slot) in to.iter_mut().enumerate() {
        let target = (u + i as f64) * step;
        while cumulative < target && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        *slot = from[j];
    }
}

pub fn write_summaries_csv<W: Write>(summaries: &[FilterSummary], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,mean,variance,ess")?;
    for s in summaries {
        writeln!(w, "{},{},{},{}", fmt_f64(s.t), fmt_f64(s.mean), fmt_f64(s.variance), fmt_f64(s.ess))?;
    }
    Ok(())
}
