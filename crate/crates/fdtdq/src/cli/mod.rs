//! Command-line front-end: `run`, `cfl` and `verify`.
//!
//! `run` writes one diagnostics CSV per region, `summary.json` and optional
//! checkpoints into the output directory. Exit codes are listed in
//! [`exit`].

mod verify;

pub use verify::{verify_suite, Expect, VerifyOptions, VerifyRow};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{RunConfig, ScenarioKind, BARRIER_STEPS};
use crate::constants::ELECTRON_VOLT;
use crate::coupling::{cross_region_conservation, CrossRegionReport, RegionGraph};
use crate::diagnostics::{self, Series, Tracker};
use crate::error::{Error, Result};
use crate::operators::Operators;
use crate::scenarios::total_probability;
use crate::scenarios::tunneling::Region;
use crate::stability::{self, StabilityReport};
use crate::stepper::Observer;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// I/O or numerical failure not attributable to the configuration.
    pub const FAILURE: i32 = 1;
    /// Malformed command line (reported by the argument parser).
    pub const USAGE: i32 = 2;
    /// Invalid configuration, including a time step above the stability
    /// limit without `--allow-unstable`.
    pub const CONFIG: i32 = 3;
    /// The divergence guard stopped the run.
    pub const DIVERGED: i32 = 4;
    /// At least one `verify` suite failed.
    pub const VERIFY_FAILED: i32 = 5;
}

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "fdtdq", version, about = "Leap-frog FDTD Schrödinger solver with conservation diagnostics")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FDTDQ_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write diagnostics.
    Run(RunArgs),
    /// Report the stability limits of a scenario's regions.
    Cfl(CflArgs),
    /// Run the invariant suites at desk scale.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "fdtdq-out")]
    pub out: PathBuf,
    /// Steps between diagnostic rows; overrides the config.
    #[arg(long)]
    pub stride: Option<u64>,
    /// Permit time steps above the stability limits.
    #[arg(long)]
    pub allow_unstable: bool,
}

#[derive(Debug, Args)]
pub struct CflArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Also write `cfl.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Add stability checks of this scenario's regions.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write `verify.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flip the sign of the boundary term in the balance suites; they must fail.
    #[arg(long, hide = true)]
    pub inject_sign_error: bool,
}

/// Parse `args` and execute; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    if let Some(n) = cli.threads {
        // A pool built earlier in this process (tests) is left as is.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Cfl(a) => cmd_cfl(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}

pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Unstable { .. } | Error::InvalidInput(_) | Error::NoRoot(_) => exit::CONFIG,
        Error::Diverged { .. } => exit::DIVERGED,
        _ => exit::FAILURE,
    }
}

fn cmd_run(a: &RunArgs) -> Result<i32> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(k) = a.stride {
        cfg.diag_stride = k;
    }
    cfg.validate()?;
    let summary = run_scenario(&cfg, &a.out, a.allow_unstable)?;
    emit(&format!(
        "{}: {} of {} steps, max residual P {:.3e}, H {:.3e}; wrote {}\n",
        summary.scenario,
        summary.steps_completed,
        summary.n_t,
        summary.max_residual_p,
        summary.max_residual_h,
        a.out.join("summary.json").display()
    ))?;
    Ok(match summary.status {
        RunStatus::Completed => exit::OK,
        RunStatus::Diverged => {
            eprintln!(
                "diverged: {}; last stable step {}",
                summary.divergence.as_deref().unwrap_or(""),
                summary.last_stable_step
            );
            exit::DIVERGED
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionSummary {
    pub name: String,
    pub csv: String,
    pub rows: usize,
    #[serde(rename = "max_residual_P")]
    pub max_residual_p: f64,
    #[serde(rename = "max_residual_H")]
    pub max_residual_h: f64,
    #[serde(rename = "max_residual_P_simple")]
    pub max_residual_p_simple: f64,
    #[serde(rename = "max_residual_H_simple")]
    pub max_residual_h_simple: f64,
    #[serde(rename = "min_P")]
    pub min_p: f64,
    #[serde(rename = "max_P")]
    pub max_p: f64,
    #[serde(rename = "min_H_J")]
    pub min_h_j: Option<f64>,
    #[serde(rename = "min_H_eV")]
    pub min_h_ev: Option<f64>,
    /// `None` when `𝒫` is not positive definite at the run's step.
    #[serde(rename = "energy_lower_bound_J")]
    pub energy_lower_bound_j: Option<f64>,
    #[serde(rename = "energy_lower_bound_eV")]
    pub energy_lower_bound_ev: Option<f64>,
    /// `min ℋ ≥` the lower bound.
    pub energy_bound_holds: Option<bool>,
    /// `min ℘ ≥ 0`.
    pub probability_nonnegative: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub status: RunStatus,
    pub divergence: Option<String>,
    pub dt_seconds: f64,
    pub dt_factor: f64,
    pub n_t: u64,
    pub steps_completed: u64,
    /// Last step whose state was within the divergence guard.
    pub last_stable_step: u64,
    pub diag_stride: u64,
    #[serde(rename = "max_residual_P")]
    pub max_residual_p: f64,
    #[serde(rename = "max_residual_H")]
    pub max_residual_h: f64,
    #[serde(rename = "min_P")]
    pub min_p: f64,
    #[serde(rename = "min_H_J")]
    pub min_h_j: Option<f64>,
    #[serde(rename = "min_H_eV")]
    pub min_h_ev: Option<f64>,
    /// Every region's energy bound holds (absent if none could be evaluated).
    pub energy_bounds_hold: Option<bool>,
    /// Reference energy of the sampled state, when known in closed form.
    #[serde(rename = "analytic_energy_J")]
    pub analytic_energy_j: Option<f64>,
    /// `max |Σℋⁿ − E| / |E|` over the rows where `ℋ` is defined.
    pub max_energy_error_relative: Option<f64>,
    pub regions: Vec<RegionSummary>,
    pub coupling: Option<CrossRegionReport>,
    pub checkpoints: Vec<String>,
}

/// Region names in graph order.
pub fn region_names(kind: ScenarioKind) -> Vec<&'static str> {
    match kind {
        ScenarioKind::InfiniteWell => vec!["well"],
        ScenarioKind::Barrier => vec!["barrier"],
        ScenarioKind::Tunneling => Region::ALL.iter().map(|r| r.name()).collect(),
    }
}

/// The scenario's region graph with the configured guard.
pub fn build_graph(cfg: &RunConfig, allow_unstable: bool) -> Result<RegionGraph> {
    let mut graph = match cfg.scenario {
        ScenarioKind::InfiniteWell => cfg.well().build(cfg.dt_factor, allow_unstable)?,
        ScenarioKind::Barrier => cfg.barrier().build(cfg.dt_factor, allow_unstable)?.0,
        ScenarioKind::Tunneling => cfg.tunneling().build(cfg.dt_factor, allow_unstable)?,
    };
    graph.set_guard_factor(Some(cfg.guard_factor));
    Ok(graph)
}

/// Steps of a run: the configured count, else the scenario's horizon.
pub fn step_count(cfg: &RunConfig, dt: f64) -> u64 {
    cfg.n_t.unwrap_or_else(|| match cfg.scenario {
        ScenarioKind::InfiniteWell => cfg.well().steps_for(dt),
        ScenarioKind::Barrier => BARRIER_STEPS,
        ScenarioKind::Tunneling => cfg.tunneling().steps_for(dt),
    })
}

fn analytic_energy(cfg: &RunConfig) -> Result<Option<f64>> {
    Ok(match cfg.scenario {
        ScenarioKind::InfiniteWell => Some(cfg.well().energy()),
        ScenarioKind::Barrier | ScenarioKind::Tunneling => None,
    })
}

/// Execute a run, writing CSVs, checkpoints and `summary.json` into `out`.
/// A divergence is reported in the summary rather than as an error.
pub fn run_scenario(cfg: &RunConfig, out: &Path, allow_unstable: bool) -> Result<RunSummary> {
    let names = region_names(cfg.scenario);
    let mut graph = build_graph(cfg, allow_unstable)?;
    let dt = graph.dt();
    let n_t = step_count(cfg, dt);
    fs::create_dir_all(out)?;
    let total_p0 = total_probability(&graph)?;

    let mut trackers =
        graph.regions().iter().map(|s| Tracker::new(s, n_t, cfg.diag_stride)).collect::<Result<Vec<_>>>()?;
    let interval = cfg.checkpoint_interval.filter(|&k| k > 0).unwrap_or(n_t.max(1));
    let mut checkpoints = Vec::new();
    let mut divergence = None;
    let mut done = 0;
    while done < n_t {
        let chunk = interval.min(n_t - done);
        let outcome = {
            let mut obs: Vec<&mut dyn Observer> = trackers.iter_mut().map(|t| t as &mut dyn Observer).collect();
            graph.run(chunk, &mut obs)
        };
        match outcome {
            Ok(()) => {}
            Err(e @ Error::Diverged { .. }) => {
                divergence = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
        done += chunk;
        if cfg.checkpoint_interval.is_some_and(|k| k > 0) {
            checkpoints.extend(write_checkpoints(&graph, &names, out)?);
        }
    }

    let mut series =
        trackers.into_iter().zip(graph.regions()).map(|(t, s)| t.finish(s)).collect::<Result<Vec<Series>>>()?;

    let mut regions = Vec::with_capacity(series.len());
    for ((s, sim), name) in series.iter_mut().zip(graph.regions()).zip(&names) {
        let csv = format!("{name}.csv");
        let mut w = std::io::BufWriter::new(fs::File::create(out.join(&csv))?);
        s.write_csv(&mut w)?;
        w.flush()?;
        // A single isolated region never exceeds its own peak ℘; coupled
        // regions are bounded by the conserved total.
        let p_max = if names.len() == 1 { s.max_p().max(0.0) } else { total_p0 };
        let bound = match diagnostics::energy_lower_bound(sim.operators(), dt, p_max) {
            Ok(b) => Some(b),
            Err(Error::Unstable { .. }) => None,
            Err(e) => return Err(e),
        };
        let min_h = s.min_h();
        regions.push(RegionSummary {
            name: name.to_string(),
            csv,
            rows: s.records.len(),
            max_residual_p: s.max_residual_p(),
            max_residual_h: s.max_residual_h(),
            max_residual_p_simple: s.max_residual_p_simple(),
            max_residual_h_simple: s.max_residual_h_simple(),
            min_p: if s.records.is_empty() { 0.0 } else { s.min_p() },
            max_p: if s.records.is_empty() { 0.0 } else { s.max_p() },
            min_h_j: min_h,
            min_h_ev: min_h.map(|h| h / ELECTRON_VOLT),
            energy_lower_bound_j: bound,
            energy_lower_bound_ev: bound.map(|b| b / ELECTRON_VOLT),
            energy_bound_holds: bound.zip(min_h).map(|(b, h)| h >= b),
            probability_nonnegative: s.records.iter().all(|r| r.p >= 0.0),
        });
    }

    let coupling = if series.len() > 1 && series[0].records.len() > 1 {
        let h_norm = series_total_h(&series).map(f64::abs).fold(0.0, f64::max);
        let h_norm = if h_norm > 0.0 { h_norm } else { 1.0 };
        Some(cross_region_conservation(&series, &graph.interfaces(), total_p0, h_norm)?)
    } else {
        None
    };

    let reference = analytic_energy(cfg)?;
    let max_energy_error =
        reference.and_then(|e| series_total_h(&series).map(|h| ((h - e) / e).abs()).reduce(f64::max));
    let (last_stable_step, div_text) = match &divergence {
        Some(Error::Diverged { step, reason }) => (*step, Some(reason.clone())),
        _ => (graph.step_index(), None),
    };
    let max_of = |f: fn(&RegionSummary) -> f64| regions.iter().map(f).fold(0.0, f64::max);
    let min_h: Option<f64> = regions.iter().filter_map(|r| r.min_h_j).reduce(f64::min);
    let bounds: Vec<bool> = regions.iter().filter_map(|r| r.energy_bound_holds).collect();
    let summary = RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        scenario: cfg.scenario.name().to_string(),
        status: if divergence.is_some() { RunStatus::Diverged } else { RunStatus::Completed },
        divergence: div_text,
        dt_seconds: dt,
        dt_factor: cfg.dt_factor,
        n_t,
        steps_completed: graph.step_index(),
        last_stable_step,
        diag_stride: cfg.diag_stride,
        max_residual_p: max_of(|r| r.max_residual_p),
        max_residual_h: max_of(|r| r.max_residual_h),
        min_p: regions.iter().map(|r| r.min_p).fold(f64::INFINITY, f64::min),
        min_h_j: min_h,
        min_h_ev: min_h.map(|h| h / ELECTRON_VOLT),
        energy_bounds_hold: (!bounds.is_empty()).then(|| bounds.iter().all(|&b| b)),
        analytic_energy_j: reference,
        max_energy_error_relative: max_energy_error,
        regions,
        coupling,
        checkpoints,
    };
    let mut w = fs::File::create(out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    Ok(summary)
}

/// `Σ_r ℋ_r` on rows where every region has `ℋ`.
fn series_total_h(series: &[Series]) -> impl Iterator<Item = f64> + '_ {
    let rows = series.iter().map(|s| s.records.len()).min().unwrap_or(0);
    (0..rows).filter_map(move |i| series.iter().map(|s| s.records[i].h).sum::<Option<f64>>())
}

fn write_checkpoints(graph: &RegionGraph, names: &[&str], out: &Path) -> Result<Vec<String>> {
    let dir = out.join("checkpoints");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for (sim, name) in graph.regions().iter().zip(names) {
        let rel = format!("checkpoints/{name}_{:09}.txt", sim.step_index());
        checkpoint::save(out.join(&rel), &sim.state())?;
        written.push(rel);
    }
    Ok(written)
}

pub type NamedOperators = (String, Arc<Operators>);

/// Operators of each region together with the run's time step.
pub fn scenario_operators(cfg: &RunConfig) -> Result<(Vec<NamedOperators>, f64)> {
    Ok(match cfg.scenario {
        ScenarioKind::InfiniteWell => {
            let ops = cfg.well().operators()?;
            let dt = cfg.dt_factor * stability::cfl_limit(&ops);
            (vec![("well".into(), ops)], dt)
        }
        ScenarioKind::Barrier => {
            let ops = cfg.barrier().operators()?;
            let dt = cfg.dt_factor * stability::cfl_limit(&ops);
            (vec![("barrier".into(), ops)], dt)
        }
        ScenarioKind::Tunneling => {
            let t = cfg.tunneling();
            let dt = cfg.dt_factor * t.barrier_cfl()?;
            let ops =
                Region::ALL.iter().map(|&r| Ok((r.name().to_string(), t.operators(r)?))).collect::<Result<Vec<_>>>()?;
            (ops, dt)
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionStability {
    pub region: String,
    pub report: StabilityReport,
}

/// Stability report of every region, certifying `𝒫` at the run's step and
/// just below and above the generalized limit.
pub fn stability_reports(cfg: &RunConfig) -> Result<Vec<RegionStability>> {
    let (regions, dt) = scenario_operators(cfg)?;
    regions
        .into_iter()
        .map(|(region, ops)| {
            let gen = stability::cfl_gen_limit(&ops)?;
            let report = stability::check_theorems(&ops, &[dt, 0.999 * gen, 1.001 * gen])?;
            Ok(RegionStability { region, report })
        })
        .collect()
}

pub fn format_stability(reports: &[RegionStability]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<10} {:>16} {:>16} {:>16} {:>12} {:>10} {:>8}\n",
        "region", "dt_cfl [s]", "dt_cfl_gen [s]", "per-cell [s]", "rel. diff", "ordering", "pd"
    ));
    for r in reports {
        let p = &r.report;
        s.push_str(&format!(
            "{:<10} {:>16.9e} {:>16.9e} {:>16} {:>12.3e} {:>10} {:>8}\n",
            r.region,
            p.dt_cfl,
            p.dt_cfl_gen,
            p.per_cell_min_dt_cfl_gen.map_or("-".to_string(), |x| format!("{x:.9e}")),
            p.relative_difference,
            if p.ordering_holds && p.per_cell_ordering_holds.unwrap_or(true) { "holds" } else { "VIOLATED" },
            if p.pd_consistent { "ok" } else { "FAIL" },
        ));
    }
    s.push('\n');
    s.push_str(&format!("{:<10} {:>16} {:>14} {:>12} {:>8}\n", "region", "dt [s]", "lambda_min(P)", "kappa(P)", "PD"));
    for r in reports {
        for c in &r.report.checks {
            s.push_str(&format!(
                "{:<10} {:>16.9e} {:>14.4e} {:>12.4e} {:>8}\n",
                r.region,
                c.dt,
                c.lambda_min,
                c.kappa,
                if c.positive_definite { "yes" } else { "no" }
            ));
        }
    }
    s
}

/// Write to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn cmd_cfl(a: &CflArgs) -> Result<i32> {
    let cfg = RunConfig::load(&a.config)?;
    let reports = stability_reports(&cfg)?;
    let json = serde_json::to_string_pretty(&reports)?;
    emit(&format!("{}\n{json}\n", format_stability(&reports)))?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("cfl.json"), json + "\n")?;
    }
    Ok(if reports.iter().all(|r| r.report.all_hold()) { exit::OK } else { exit::VERIFY_FAILED })
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let scenario = a.config.as_ref().map(RunConfig::load).transpose()?;
    let rows = verify_suite(&VerifyOptions { scenario, inject_sign_error: a.inject_sign_error })?;
    emit(&verify::format_table(&rows))?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
    }
    Ok(if rows.iter().all(|r| r.passed) { exit::OK } else { exit::VERIFY_FAILED })
}
