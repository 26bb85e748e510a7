//! `tomolab`: simulate homodyne data, fit states, and run the risk benchmarks.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for numerical failures.
//! Every output file embeds the parsed arguments, the raw argument vector and the
//! seed, so a run can be reproduced from its outputs alone.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tomolab::bench::{run_bench, BenchConfig, BenchEstimator, BenchReport};
use tomolab::homodyne::{sample, SampleSet};
use tomolab::pfp::{cross_validate, estimate_pfp};
use tomolab::sml::{estimate_sml, estimate_sml_direct, InitStrategy, SieveConfig};
use tomolab::states::{HermitianMatrix, RawMatrix, StateSpec};
use tomolab::wigner::{kernel_estimate, plugin_estimate, wigner_of_state, GridGeometry, WignerGrid};

/// Environment variable that sets the worker count.
const THREADS_VAR: &str = "TOMOLAB_THREADS";

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[command(name = "tomolab", version, about = "Quantum homodyne tomography toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Draw homodyne records from a reference state.
    Simulate(SimulateArgs),
    /// Fit a density matrix (pfp, sml) or a Wigner grid (kernel) to records.
    Estimate(EstimateArgs),
    /// Select the PFP truncation dimension by the unbiased risk estimate.
    CrossValidate(CrossValidateArgs),
    /// Evaluate a Wigner function on a grid.
    Wigner(WignerArgs),
    /// Monte Carlo risk study.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// State spec `kind:key=val,...`, e.g. `squeezed:N=1.2,xi=0.4`.
    #[arg(long)]
    pub state: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
    /// Treat truncation warnings as errors.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorArg {
    Pfp,
    Sml,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    OnePhotonLike,
    Chaotic,
    Pilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendArg {
    Em,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Sample CSV written by `simulate`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub estimator: EstimatorArg,
    /// Truncation dimension (pfp, sml).
    #[arg(long = "N")]
    pub dim: Option<usize>,
    /// Frequency cutoff of the kernel estimator.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, value_enum, default_value_t = InitArg::Chaotic)]
    pub init: InitArg,
    #[arg(long, value_enum, default_value_t = BackendArg::Em)]
    pub backend: BackendArg,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Grid `half_width,points` for the kernel estimator.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CrossValidateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Largest dimension considered.
    #[arg(long = "N")]
    pub dim: usize,
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct WignerArgs {
    /// Reference state spec.
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    pub state: Option<String>,
    /// Matrix JSON or fit report from `estimate`.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Grid `half_width,points`; defaults depend on the dimension.
    #[arg(long)]
    pub grid: Option<String>,
    /// Output path; `.json` selects the JSON form, anything else CSV.
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FigureArg {
    /// Mean error at the selected dimension against sample size.
    RiskVsN,
    /// Mean error against dimension at each sample size.
    ErrorVsDim,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = FigureArg::RiskVsN)]
    pub figure: FigureArg,
    #[arg(long)]
    pub state: String,
    #[arg(long, default_value_t = 15)]
    pub reps: usize,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 200, 400, 800, 1600, 3200, 6400, 12800])]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub pfp_max_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub sml_max_dim: usize,
    #[arg(long, default_value_t = 200)]
    pub sml_max_iter: usize,
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Numeric(tomolab::Error),
}

impl From<tomolab::Error> for Failure {
    fn from(e: tomolab::Error) -> Self {
        match e {
            // Bad inputs and refused configurations are usage errors.
            tomolab::Error::Io(_)
            | tomolab::Error::Format(_)
            | tomolab::Error::Csv(_)
            | tomolab::Error::Json(_)
            | tomolab::Error::Parameter(_)
            | tomolab::Error::NoisyPatternEstimate(_) => Failure::Usage(e.to_string()),
            e => Failure::Numeric(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn parse_state(s: &str) -> Outcome<StateSpec> {
    s.parse().map_err(|e: tomolab::Error| Failure::Usage(e.to_string()))
}

fn parse_grid(s: &Option<String>, dim: usize) -> Outcome<GridGeometry> {
    let Some(s) = s else {
        return Ok(GridGeometry::default_for(dim));
    };
    let bad = || Failure::Usage(format!("--grid expects 'half_width,points', got '{s}'"));
    let (h, n) = s.split_once(',').ok_or_else(bad)?;
    let half: f64 = h.trim().parse().map_err(|_| bad())?;
    let points: usize = n.trim().parse().map_err(|_| bad())?;
    GridGeometry::square(half, points).map_err(|e| Failure::Usage(e.to_string()))
}

/// Provenance block embedded in every output.
fn provenance(cli: &Cli, argv: &[String], seed: Option<u64>) -> Outcome<Value> {
    Ok(json!({
        "argv": argv,
        "args": serde_json::to_value(cli)?,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

fn write_json(path: &Path, v: &Value) -> Outcome<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn read_samples(path: &Path) -> Outcome<SampleSet> {
    SampleSet::read_csv(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Reads a matrix JSON or the `rho` field of a fit report.
fn read_matrix(path: &Path) -> Outcome<RawMatrix> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    let m = v.get("rho").cloned().unwrap_or(v);
    Ok(serde_json::from_value(m)?)
}

fn write_grid(grid: &WignerGrid, path: &Path, config: Value) -> Outcome<()> {
    if path.extension().is_some_and(|e| e == "json") {
        let mut g = grid.clone();
        g.config = Some(config);
        g.write_json(path)?;
    } else {
        grid.write_csv(path, Some(config))?;
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, prov: Value) -> Outcome<()> {
    let spec = parse_state(&a.state)?;
    if !(a.eta > 0.0 && a.eta <= 1.0) {
        return Err(Failure::Usage(format!("--eta must lie in (0, 1], got {}", a.eta)));
    }
    let prepared = spec.prepare(a.strict)?;
    for w in &prepared.warnings {
        log::warn!("{w}");
    }
    let mut data = sample(&prepared.state, a.n, a.eta, a.seed)?;
    data.state_label = spec.to_string();
    data.write_csv(&a.out, Some(prov))?;
    Ok(())
}

fn estimate(a: &EstimateArgs, prov: Value) -> Outcome<()> {
    let data = read_samples(&a.input)?;
    match a.estimator {
        EstimatorArg::Pfp => {
            let dim = a.dim.ok_or_else(|| Failure::Usage("pfp needs --N".into()))?;
            let rho = estimate_pfp(&data, dim)?;
            write_json(&a.out, &json!({ "rho": rho, "config": prov, "seed": data.seed }))
        }
        EstimatorArg::Sml => {
            let dim = a.dim.ok_or_else(|| Failure::Usage("sml needs --N".into()))?;
            let mut cfg = SieveConfig::new(dim);
            cfg.max_iter = a.max_iter;
            cfg.tol = a.tol;
            cfg.strict = a.strict;
            cfg.init = match a.init {
                InitArg::OnePhotonLike => InitStrategy::OnePhotonLike,
                InitArg::Chaotic => InitStrategy::Chaotic,
                InitArg::Pilot => InitStrategy::PilotEstimate,
            };
            let fit = match a.backend {
                BackendArg::Em => estimate_sml(&data, &cfg)?,
                BackendArg::Direct => estimate_sml_direct(&data, &cfg)?,
            };
            write_json(
                &a.out,
                &json!({
                    "rho": fit.rho,
                    "loglik_trace": fit.loglik_trace,
                    "iters": fit.iters,
                    "converged": fit.converged,
                    "degenerate_components": fit.degenerate_components,
                    "floored": fit.floored,
                    "config": prov,
                    "seed": data.seed,
                }),
            )
        }
        EstimatorArg::Kernel => {
            let c = a.c.ok_or_else(|| Failure::Usage("kernel needs --c".into()))?;
            if c.is_nan() || c <= 0.0 {
                return Err(Failure::Usage(format!("--c must be > 0, got {c}")));
            }
            if data.eta < 1.0 {
                return Err(Failure::Usage("kernel estimator needs ideal data (eta = 1)".into()));
            }
            let geometry = parse_grid(&a.grid, 1)?;
            write_grid(&kernel_estimate(&data, c, geometry)?, &a.out, prov)
        }
    }
}

fn cross_validate_cmd(a: &CrossValidateArgs, prov: Value) -> Outcome<()> {
    let data = read_samples(&a.input)?;
    let cv = cross_validate(&data, a.dim)?;
    write_json(
        &a.out,
        &json!({ "n_star": cv.n_star, "risk_curve": cv.risk_curve, "config": prov, "seed": data.seed }),
    )
}

fn wigner_cmd(a: &WignerArgs, prov: Value) -> Outcome<()> {
    let grid = if let Some(s) = &a.state {
        let spec = parse_state(s)?;
        let prepared = spec.prepare(a.strict)?;
        let geometry = parse_grid(&a.grid, prepared.state.dim())?;
        wigner_of_state(&prepared.state, geometry)?
    } else {
        let path = a.matrix.as_ref().expect("clap enforces --state or --matrix");
        let m = read_matrix(path)?;
        let geometry = parse_grid(&a.grid, m.dim())?;
        plugin_estimate(&m, geometry)?
    };
    write_grid(&grid, &a.out, prov)
}

fn bench_csv(report: &BenchReport, figure: FigureArg, cfg: &BenchConfig) -> String {
    let mut out = String::new();
    match figure {
        FigureArg::RiskVsN => {
            out.push_str("n,estimator,N_star,l2_risk\n");
            for s in &report.summary {
                out.push_str(&format!("{},{},{},{}\n", s.n, s.estimator, s.n_star, s.l2_risk));
            }
        }
        FigureArg::ErrorVsDim => {
            out.push_str("n,estimator,N,l2_error\n");
            for &n in &cfg.ns {
                for &e in &cfg.estimators {
                    for (i, v) in report.mean_error_curve(n, e).iter().enumerate() {
                        out.push_str(&format!("{n},{e},{},{v}\n", i + 1));
                    }
                }
            }
        }
    }
    out
}

fn bench(a: &BenchArgs, prov: Value) -> Outcome<()> {
    let spec = parse_state(&a.state)?;
    if a.reps < 1 || a.ns.is_empty() {
        return Err(Failure::Usage("bench needs --reps >= 1 and at least one sample size".into()));
    }
    let prepared = spec.prepare(a.strict)?;
    let mut cfg = BenchConfig::new(a.ns.clone(), a.reps, a.seed);
    cfg.estimators = vec![BenchEstimator::Pfp, BenchEstimator::Sml];
    cfg.pfp_max_dim = a.pfp_max_dim;
    cfg.sml_max_dim = a.sml_max_dim;
    cfg.sml_max_iter = a.sml_max_iter;
    let report = run_bench(&prepared.state, &spec.to_string(), &cfg)?;
    std::fs::write(&a.out, bench_csv(&report, a.figure, &cfg))?;
    let side = SampleSet::sidecar_path(&a.out);
    write_json(
        &side,
        &json!({
            "config": prov,
            "bench": cfg,
            "rates": report.rates,
            "cells": report.cells,
        }),
    )
}

fn run(cli: &Cli, argv: &[String]) -> Outcome<()> {
    let seed = match &cli.command {
        Command::Simulate(a) => Some(a.seed),
        Command::Bench(a) => Some(a.seed),
        _ => None,
    };
    let prov = provenance(cli, argv, seed)?;
    match &cli.command {
        Command::Simulate(a) => simulate(a, prov),
        Command::Estimate(a) => estimate(a, prov),
        Command::CrossValidate(a) => cross_validate_cmd(a, prov),
        Command::Wigner(a) => wigner_cmd(a, prov),
        Command::Bench(a) => bench(a, prov),
    }
}

fn configure_threads() -> Outcome<()> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|_| run(&cli, &argv));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn serialized_args_round_trip() {
        let cli = Cli::try_parse_from([
            "tomolab", "simulate", "--state", "coherent:N=1", "--n", "10", "--seed", "3", "-o", "x.csv",
        ])
        .unwrap();
        let back: Cli = serde_json::from_value(serde_json::to_value(&cli).unwrap()).unwrap();
        assert_eq!(back, cli);
    }

    #[test]
    fn grid_argument() {
        let g = parse_grid(&Some("5,64".into()), 3).unwrap();
        assert_eq!((g.q_min, g.nq), (-5.0, 64));
        assert!(parse_grid(&Some("5".into()), 3).is_err());
        assert_eq!(parse_grid(&None, 3).unwrap(), GridGeometry::default_for(3));
    }
}
