//! Experiment configuration, presets, and orchestration of
//! construct → simulate → closed form → oracles → metrics.

pub mod cli;
mod compare;
mod run;

use std::fmt;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

pub use compare::{compare_densities, histogram_on_grid};
pub use run::{closed_form_moments, run_experiment, ExperimentOutput, MetricsRow, METRICS_HEADER};

use crate::construct::{FilterProblem, LipschitzDomain};
use crate::error::Error;
use crate::expfam::{extend_family, CanonicalParams};
use crate::expr::{parse, Expr};

/// Pipeline stage at which a run failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Problem,
    Simulate,
    ClosedForm,
    ParticleFilter,
    Zakai,
    Residual,
    Metrics,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Problem => "problem",
            Stage::Simulate => "simulate",
            Stage::ClosedForm => "closed-form",
            Stage::ParticleFilter => "particle-filter",
            Stage::Zakai => "zakai",
            Stage::Residual => "residual",
            Stage::Metrics => "metrics",
            Stage::Output => "output",
        }
    }
}

#[derive(Debug)]
pub struct RunError {
    pub stage: Stage,
    pub source: Error,
}

impl RunError {
    pub fn new(stage: Stage, source: impl Into<Error>) -> Self {
        RunError { stage, source: source.into() }
    }

    /// 1 for invalid input, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Config | Stage::Problem => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}`: {}", self.stage.name(), self.source)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Staged result alias.
pub type StageResult<T> = std::result::Result<T, RunError>;

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T, E: Into<Error>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|e| RunError::new(stage, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default)]
    pub name: String,
    /// Diffusion coefficient `a_t(x) = σ_t(x)²`.
    #[serde(default = "default_a")]
    pub a: String,
    pub h: String,
    /// Statistics appended after `h` and `h²`.
    #[serde(default)]
    pub c: Vec<String>,
    pub zeta0: Vec<f64>,
    #[serde(default)]
    pub beta0: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: f64,
    pub seed: u64,
    pub replicates: usize,
    /// Fixed initial state; sampled from `q₀` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection { dt: 1e-3, seed: 1, replicates: 1, x0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub particles: usize,
    pub zakai_dx: f64,
    pub zakai_substeps: usize,
    /// Fixed Zakai grid; otherwise the closed-form mean ± `zakai_std_range` std.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zakai_bounds: Option<[f64; 2]>,
    pub zakai_std_range: f64,
    pub comparison_times: Vec<f64>,
    pub comparison_nodes: usize,
    pub histogram_bins: usize,
    pub lipschitz_x: [f64; 2],
    pub lipschitz_y: [f64; 2],
    pub residual_probes: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            particles: 100_000,
            zakai_dx: 1e-2,
            zakai_substeps: 1,
            zakai_bounds: None,
            zakai_std_range: 8.0,
            comparison_times: vec![0.25, 0.5, 1.0],
            comparison_nodes: 4097,
            histogram_bins: 200,
            lipschitz_x: [-5.0, 5.0],
            lipschitz_y: [-5.0, 5.0],
            residual_probes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    pub paths: bool,
    pub densities: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, paths: true, densities: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_a() -> String {
    "1".into()
}

fn default_horizon() -> f64 {
    1.0
}

fn invalid(msg: impl Into<String>) -> RunError {
    RunError::new(Stage::Config, Error::InvalidConfig(msg.into()))
}

fn parse_field(field: &str, source: &str) -> StageResult<Expr> {
    parse(source).map_err(|e| invalid(format!("{field} = {source:?}: {e}")))
}

impl ExperimentConfig {
    /// Parse TOML, or JSON when the text starts with `{` (the form echoed
    /// into `report.json`).
    pub fn from_str(text: &str) -> StageResult<Self> {
        let config: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| invalid(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &FsPath) -> StageResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> StageResult<()> {
        let p = &self.problem;
        parse_field("problem.a", &p.a)?;
        parse_field("problem.h", &p.h)?;
        for (i, c) in p.c.iter().enumerate() {
            parse_field(&format!("problem.c[{i}]"), c)?;
        }
        if p.zeta0.len() != p.c.len() + 2 {
            return Err(invalid(format!(
                "problem.zeta0 has {} entries, expected {} (h, h^2 and {} statistics)",
                p.zeta0.len(),
                p.c.len() + 2,
                p.c.len()
            )));
        }
        if !(p.horizon > 0.0) || !p.horizon.is_finite() {
            return Err(invalid(format!("problem.horizon must be positive, got {}", p.horizon)));
        }
        let s = &self.simulation;
        crate::sde::SimConfig::new(s.dt, p.horizon, s.seed).steps().map_err(|e| invalid(format!("simulation.dt: {e}")))?;
        if s.replicates == 0 {
            return Err(invalid("simulation.replicates must be at least 1"));
        }
        let o = &self.oracle;
        if let Some(t) = o.comparison_times.iter().find(|&&t| !(0.0..=p.horizon).contains(&t)) {
            return Err(invalid(format!("oracle.comparison_times: {t} is outside [0, {}]", p.horizon)));
        }
        if let Some(t) = o.comparison_times.iter().find(|&&t| ((t / s.dt) - (t / s.dt).round()).abs() > 1e-6) {
            return Err(invalid(format!("oracle.comparison_times: {t} is not a multiple of dt = {}", s.dt)));
        }
        if o.comparison_nodes < crate::expfam::MIN_GRID_NODES || o.histogram_bins == 0 {
            return Err(invalid("oracle.comparison_nodes must be >= 64 and oracle.histogram_bins >= 1"));
        }
        if !(o.zakai_dx > 0.0) || o.zakai_substeps == 0 || !(o.zakai_std_range > 0.0) {
            return Err(invalid("oracle.zakai_dx, zakai_substeps and zakai_std_range must be positive"));
        }
        if let Some([lo, hi]) = o.zakai_bounds {
            if !(hi > lo) {
                return Err(invalid(format!("oracle.zakai_bounds [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    /// Output directory, defaulting to `out/<name>`.
    pub fn output_dir(&self) -> std::path::PathBuf {
        match &self.output.dir {
            Some(d) => d.into(),
            None => {
                let name = if self.problem.name.is_empty() { "experiment" } else { &self.problem.name };
                FsPath::new("out").join(name)
            }
        }
    }

    pub fn lipschitz_domain(&self) -> LipschitzDomain {
        let (x, y) = (self.oracle.lipschitz_x, self.oracle.lipschitz_y);
        LipschitzDomain { x: (x[0], x[1]), y: (y[0], y[1]) }
    }

    /// Parse the expressions and assemble the filtering problem.
    pub fn build_problem(&self) -> StageResult<FilterProblem> {
        let p = &self.problem;
        let a = parse_field("problem.a", &p.a)?;
        let h = parse_field("problem.h", &p.h)?;
        let c = p
            .c
            .iter()
            .enumerate()
            .map(|(i, s)| parse_field(&format!("problem.c[{i}]"), s))
            .collect::<StageResult<Vec<_>>>()?;
        let stats = extend_family(c, h).at(Stage::Problem)?;
        FilterProblem::new(a, stats, CanonicalParams::new(p.zeta0.clone(), p.beta0), p.horizon).at(Stage::Problem)
    }
}

/// Built-in benchmark systems.
pub const PRESETS: &[(&str, &str)] = &[
    ("cubic-sensor", "a = 1, h = x^3, zeta0 = (0, -1): filter density exp[Y x^3 - (1 + t/2) x^6]"),
    ("linear-kalman", "a = 1, h = x, N(0, 1) prior: Kalman-Bucy posterior"),
    ("linear-nonconstant-a", "a = 1 + x^2/2, h = x, N(0, 1) prior: Gaussian filter with state-dependent noise"),
];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let (a, h, zeta0, bounds) = match name {
        "cubic-sensor" => ("1", "x^3", vec![0.0, -1.0], Some([-3.0, 3.0])),
        "linear-kalman" => ("1", "x", vec![0.0, -0.5], None),
        "linear-nonconstant-a" => ("1 + 0.5*x^2", "x", vec![0.0, -0.5], None),
        _ => return None,
    };
    Some(ExperimentConfig {
        problem: ProblemSection {
            name: name.into(),
            a: a.into(),
            h: h.into(),
            c: vec![],
            zeta0,
            beta0: 0.0,
            horizon: 1.0,
        },
        simulation: SimulationSection::default(),
        oracle: OracleSection { zakai_bounds: bounds, ..OracleSection::default() },
        output: OutputSection::default(),
    })
}
