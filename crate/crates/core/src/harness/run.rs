use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use super::{compare_densities, histogram_on_grid, AtStage, ExperimentConfig, Stage, StageResult};
use crate::construct::{ConditionReport, FilterProblem};
use crate::error::Result;
use crate::expfam::{self, fmt_f64, CanonicalParams, DensityGrid, QuadConfig, SufficientStats};
use crate::reference::{
    auto_bounds, dmz_residual, particle_filter, random_probes, write_summaries_csv, ParticleConfig, ResidualReport,
    ZakaiConfig,
};
use crate::sde::{replicate_seed, simulate, InitialCondition, Path, SimConfig, Stream};

pub const METRICS_HEADER: &str = "t,cf_mean,cf_var,pf_mean,pf_var,pf_stderr,zk_mean,zk_var,l1_pf,l1_zk,hell_pf,hell_zk";

const RESIDUAL_Y: [f64; 3] = [-1.0, 0.0, 1.0];
const RESIDUAL_X: (f64, f64) = (-2.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub t: f64,
    pub cf_mean: f64,
    pub cf_var: f64,
    pub pf_mean: f64,
    pub pf_var: f64,
    pub pf_stderr: f64,
    pub zk_mean: f64,
    pub zk_var: f64,
    pub l1_pf: f64,
    pub l1_zk: f64,
    pub hell_pf: f64,
    pub hell_zk: f64,
}

impl MetricsRow {
    fn csv(&self) -> String {
        [
            self.t,
            self.cf_mean,
            self.cf_var,
            self.pf_mean,
            self.pf_var,
            self.pf_stderr,
            self.zk_mean,
            self.zk_var,
            self.l1_pf,
            self.l1_zk,
            self.hell_pf,
            self.hell_zk,
        ]
        .iter()
        .map(|&v| fmt_f64(v))
        .collect::<Vec<_>>()
        .join(",")
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Rows of replicate 0 (`metrics.csv`).
    pub rows: Vec<MetricsRow>,
    /// Rows of every replicate, replicate 0 first.
    pub replicate_rows: Vec<Vec<MetricsRow>>,
    pub condition: ConditionReport,
    pub residual: Vec<ResidualReport>,
    pub warnings: Vec<String>,
    pub out_dir: PathBuf,
}

/// Mean and variance of `q(·; ζ, β)`: closed form when `ζᵀc•` is a
/// concave quadratic, quadrature otherwise.
pub fn closed_form_moments(stats: &SufficientStats, params: &CanonicalParams) -> Result<(f64, f64)> {
    let mut coeffs = vec![0.0; 3];
    let mut quadratic = true;
    for (stat, &z) in stats.iter().zip(&params.zeta) {
        match stat.expr.polynomial_coefficients() {
            Some(c) if c.len() <= 3 => c.iter().enumerate().for_each(|(i, v)| coeffs[i] += z * v),
            _ => {
                quadratic = false;
                break;
            }
        }
    }
    if quadratic && coeffs[2] < 0.0 {
        return Ok((-coeffs[1] / (2.0 * coeffs[2]), -0.5 / coeffs[2]));
    }
    let m = expfam::moment_summary(stats, params, &QuadConfig::default())?;
    Ok((m.mean, m.variance))
}

/// Writes every artifact below one root, in call order.
struct Collector {
    root: PathBuf,
}

impl Collector {
    fn new(root: PathBuf) -> StageResult<Self> {
        fs::create_dir_all(&root).at(Stage::Output)?;
        Ok(Collector { root })
    }

    fn write<F>(&mut self, relative: &str, body: F) -> StageResult<()>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).at(Stage::Output)?;
        }
        let mut w = BufWriter::new(fs::File::create(&path).at(Stage::Output)?);
        body(&mut w).and_then(|_| w.flush()).at(Stage::Output)?;
        Ok(())
    }
}

fn residual_summary(problem: &FilterProblem, config: &ExperimentConfig) -> StageResult<Vec<ResidualReport>> {
    let probes = random_probes(config.simulation.seed, config.oracle.residual_probes, RESIDUAL_X, (0.0, problem.horizon));
    RESIDUAL_Y
        .iter()
        .map(|&y| dmz_residual(problem, &problem.initial, &probes, y).at(Stage::Residual))
        .collect()
}

/// DMZ-residual oracle on `[-2, 2] × [0, T]` at `Y ∈ {-1, 0, 1}`.
pub(crate) fn residual_only(config: &ExperimentConfig) -> StageResult<Vec<ResidualReport>> {
    let problem = config.build_problem()?;
    residual_summary(&problem, config)
}

fn step_of(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

fn time_label(t: f64) -> String {
    format!("{t:.6}")
}

struct Replicate {
    rows: Vec<MetricsRow>,
    closed_form: Vec<serde_json::Value>,
    zakai: serde_json::Value,
}

fn run_replicate(
    problem: &FilterProblem,
    config: &ExperimentConfig,
    index: usize,
    out: &mut Collector,
    warnings: &mut Vec<String>,
) -> StageResult<Replicate> {
    let sim = &config.simulation;
    let oracle = &config.oracle;
    let seed = replicate_seed(sim.seed, index as u64);
    let sim_config = SimConfig {
        dt: sim.dt,
        horizon: problem.horizon,
        seed,
        initial: sim.x0.map_or(InitialCondition::Prior, InitialCondition::Fixed),
    };
    let path = simulate(problem, &sim_config).at(Stage::Simulate)?;
    let tag = format!("{index:03}");
    if config.output.paths {
        out.write(&format!("paths/path_{tag}.csv"), |w| path.write_csv(w))?;
    }
    write_closed_form_series(problem, &path, out, &tag)?;

    let steps: Vec<usize> = oracle.comparison_times.iter().map(|&t| step_of(t, sim.dt)).collect();
    let pf = particle_filter(problem, &path, &ParticleConfig { particles: oracle.particles, seed, snapshot_steps: steps.clone() })
        .at(Stage::ParticleFilter)?;
    out.write(&format!("oracles/particle_{tag}.csv"), |w| write_summaries_csv(&pf.summaries, w))?;

    let bounds = match oracle.zakai_bounds {
        Some([lo, hi]) => (lo, hi),
        None => auto_bounds(problem, &path, oracle.zakai_std_range).at(Stage::Zakai)?,
    };
    let zk_config = ZakaiConfig { bounds, dx: oracle.zakai_dx, substeps: oracle.zakai_substeps, snapshot_steps: steps.clone() };
    let zk = crate::reference::zakai_solve(problem, &path, &zk_config).at(Stage::Zakai)?;
    warnings.extend(zk.warnings.iter().map(|w| format!("replicate {index}: {w}")));
    out.write(&format!("oracles/zakai_{tag}.csv"), |w| {
        writeln!(w, "t,mean,variance,log_mass")?;
        for s in &zk.summaries {
            writeln!(w, "{},{},{},{}", fmt_f64(s.t), fmt_f64(s.mean), fmt_f64(s.variance), fmt_f64(s.log_mass))?;
        }
        Ok(())
    })?;

    // Comparison grid: union of the closed-form quadrature domains.
    let quad = QuadConfig::default();
    let mut half_width: f64 = 0.0;
    let (mut hist_lo, mut hist_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut cf = Vec::with_capacity(steps.len());
    for &k in &steps {
        let params = problem.closed_form(path.times[k], path.y[k]);
        half_width = half_width.max(expfam::support(&problem.stats, &params, &quad).at(Stage::ClosedForm)?.half_width);
        let (mean, var) = closed_form_moments(&problem.stats, &params).at(Stage::ClosedForm)?;
        hist_lo = hist_lo.min(mean - oracle.zakai_std_range * var.sqrt());
        hist_hi = hist_hi.max(mean + oracle.zakai_std_range * var.sqrt());
        cf.push((params, mean, var));
    }

    let mut rows = Vec::with_capacity(steps.len());
    let mut closed_form = Vec::with_capacity(steps.len());
    for (j, &k) in steps.iter().enumerate() {
        let t = oracle.comparison_times[j];
        let (params, cf_mean, cf_var) = &cf[j];
        let log_peak = expfam::support(&problem.stats, params, &quad).at(Stage::ClosedForm)?.log_peak;
        let cf_grid = DensityGrid::from_fn(-half_width, half_width, oracle.comparison_nodes, |x| {
            (problem.stats.exponent(&params.zeta, x) - log_peak).exp()
        })
        .at(Stage::Metrics)?;

        let ensemble = &pf.snapshots.iter().find(|(s, _)| *s == k).expect("snapshot at comparison step").1;
        let hist = ensemble.histogram(hist_lo, hist_hi, oracle.histogram_bins);
        let pf_grid = histogram_on_grid(&hist, hist_lo, hist_hi, &cf_grid).at(Stage::Metrics)?;
        let zk_state = &zk.states.iter().find(|(s, _)| *s == k).expect("snapshot at comparison step").1;
        let zk_grid = zk_state.grid.resample(-half_width, half_width, oracle.comparison_nodes).at(Stage::Metrics)?;

        let (l1_pf, hell_pf) = compare_densities(&cf_grid, &pf_grid).at(Stage::Metrics)?;
        let (l1_zk, hell_zk) = compare_densities(&cf_grid, &zk_grid).at(Stage::Metrics)?;
        let s = pf.summaries[k];
        let z = zk.summaries[k];
        rows.push(MetricsRow {
            t,
            cf_mean: *cf_mean,
            cf_var: *cf_var,
            pf_mean: s.mean,
            pf_var: s.variance,
            pf_stderr: s.stderr(),
            zk_mean: z.mean,
            zk_var: z.variance,
            l1_pf,
            l1_zk,
            hell_pf,
            hell_zk,
        });
        closed_form.push(json!({ "t": t, "y": path.y[k], "zeta": params.zeta, "beta": params.beta }));

        if config.output.densities {
            let label = time_label(t);
            let (cfn, pfn, zkn) = (
                cf_grid.normalized().at(Stage::Metrics)?,
                pf_grid.normalized().at(Stage::Metrics)?,
                zk_grid.normalized().at(Stage::Metrics)?,
            );
            out.write(&format!("densities/{tag}/compare_t{label}.csv"), |w| {
                writeln!(w, "x,cf,pf,zk")?;
                for i in 0..cfn.len() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        fmt_f64(cfn.nodes()[i]),
                        fmt_f64(cfn.values()[i]),
                        fmt_f64(pfn.values()[i]),
                        fmt_f64(zkn.values()[i])
                    )?;
                }
                Ok(())
            })?;
            out.write(&format!("densities/{tag}/zakai_t{label}.csv"), |w| zk_state.grid.write_csv(w))?;
        }
    }
    let zakai = json!({
        "bounds": [bounds.0, bounds.1],
        "dx": oracle.zakai_dx,
        "substeps": oracle.zakai_substeps,
        "upwind_faces": zk.upwind_faces,
        "max_peclet": zk.max_peclet,
        "clipped_mass": zk.clipped_mass,
        "resamples": pf.resamples,
    });
    Ok(Replicate { rows, closed_form, zakai })
}

fn write_closed_form_series(problem: &FilterProblem, path: &Path, out: &mut Collector, tag: &str) -> StageResult<()> {
    let m = problem.stats.len();
    out.write(&format!("oracles/closed_form_{tag}.csv"), |w| {
        let names: Vec<String> = (1..=m).map(|i| format!("zeta_{i}")).collect();
        writeln!(w, "t,y,{},beta", names.join(","))?;
        for k in 0..path.len() {
            let p = problem.closed_form(path.times[k], path.y[k]);
            let zeta: Vec<String> = p.zeta.iter().map(|&z| fmt_f64(z)).collect();
            writeln!(w, "{},{},{},{}", fmt_f64(path.times[k]), fmt_f64(path.y[k]), zeta.join(","), fmt_f64(p.beta))?;
        }
        Ok(())
    })
}

fn write_metrics(rows: &[MetricsRow], w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

/// Run the full pipeline and write all artifacts under the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> StageResult<ExperimentOutput> {
    config.validate()?;
    let problem = config.build_problem()?;
    let condition = problem.condition_a(&config.lipschitz_domain());
    let mut warnings: Vec<String> = condition
        .items
        .iter()
        .filter(|it| !it.pass)
        .map(|it| format!("condition (A) item {} does not hold globally (advisory)", it.name))
        .collect();
    let residual = residual_summary(&problem, config)?;

    let out_dir = config.output_dir();
    let mut out = Collector::new(out_dir.clone())?;
    let mut replicate_rows = Vec::with_capacity(config.simulation.replicates);
    let mut closed_form = Vec::new();
    let mut zakai = Vec::new();
    for r in 0..config.simulation.replicates {
        let rep = run_replicate(&problem, config, r, &mut out, &mut warnings)?;
        let name = if r == 0 { "metrics.csv".to_string() } else { format!("metrics_replicate_{r:03}.csv") };
        out.write(&name, |w| write_metrics(&rep.rows, w))?;
        replicate_rows.push(rep.rows);
        closed_form.push(rep.closed_form);
        zakai.push(rep.zakai);
    }

    let seeds: Vec<_> = (0..config.simulation.replicates)
        .map(|r| json!({ "replicate": r, "seed": replicate_seed(config.simulation.seed, r as u64) }))
        .collect();
    let streams: Vec<_> = [Stream::StateNoise, Stream::ObsNoise, Stream::Initial, Stream::Particles, Stream::Resampling, Stream::ParticleInit]
        .iter()
        .map(|s| json!({ "name": s.name(), "id": *s as u64 }))
        .collect();
    let residual_max = residual.iter().map(ResidualReport::max).fold(0.0, f64::max);
    let report = json!({
        "config": config,
        "condition_a": condition,
        "residual": {
            "y_values": RESIDUAL_Y,
            "x_range": [RESIDUAL_X.0, RESIDUAL_X.1],
            "reports": residual,
            "max": residual_max,
        },
        "closed_form": closed_form,
        "zakai": zakai,
        "seeds": {
            "master": config.simulation.seed,
            "scheme": "replicate seed = master + index; each consumer draws from ChaCha8 keyed by the replicate seed on its own stream id",
            "replicates": seeds,
            "streams": streams,
        },
        "warnings": warnings,
        "versions": { "fdfilter": env!("CARGO_PKG_VERSION"), "report_format": 1 },
    });
    out.write("report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;

    Ok(ExperimentOutput {
        rows: replicate_rows[0].clone(),
        replicate_rows,
        condition,
        residual,
        warnings,
        out_dir,
    })
}
