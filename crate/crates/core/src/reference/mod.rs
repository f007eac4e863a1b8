//! Independent numerical solutions of the filtering problem: a bootstrap
//! particle filter, a finite-difference Zakai solver, and the pointwise
//! DMZ residual of the closed-form density.

mod particle;
mod residual;
mod zakai;

pub use particle::{particle_filter, write_summaries_csv, FilterSummary, ParticleConfig, ParticleEnsemble, ParticleOutput};
pub use residual::{
    dmz_residual, dmz_residual_with, general_dmz_residual, random_probes, PerturbedDrift, ResidualReport, SymbolicDrift,
};
pub use zakai::{auto_bounds, zakai_solve, ZakaiConfig, ZakaiOutput, ZakaiState};

/// Discrete Girsanov log-weight `h ΔY − ½ h² Δt`.
#[inline]
pub(crate) fn log_likelihood(h: f64, dy: f64, dt: f64) -> f64 {
    h * dy - 0.5 * h * h * dt
}
