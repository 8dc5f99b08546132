//! `afd`: capacity planning and simulation for attention/FFN disaggregated
//! decoding.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 when a
//! run fails.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afd_core::analytic::{optimal_ratio, predicted_throughput};
use afd_core::calibrate::{
    derive_attention_slope, derive_comm_slope, derive_ffn_slope, fit_linear, read_trace_csv,
};
use afd_core::experiment::{
    compare, point_theory, point_workload, read_sweep_csv, render_report, run_sweep, simulate_point,
    write_report_csv, write_sweep_csv, SweepPoint,
};
use afd_core::model::WorkloadSpec;
use afd_core::simcore::{write_trace_csv, RunOptions};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use config::{extract_overrides, hardware_params, ConfigError, ExperimentConfig, RawConfig};

#[derive(Parser)]
#[command(name = "afd", version, about = "Capacity planning for attention/FFN disaggregated decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form optimal A/F ratio and bottleneck regime.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// One simulation run; prints a metrics CSV row.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the event trace (default path trace.csv).
        #[arg(long, num_args = 0..=1, default_missing_value = "trace.csv")]
        trace: Option<PathBuf>,
    },
    /// Simulate every grid point of the sweep axes and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Maximum parallel simulations (all cores by default).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Fit latency coefficients from `load,latency` traces.
    Calibrate {
        /// Attention trace: token load T against latency.
        #[arg(long)]
        attention: Option<PathBuf>,
        /// FFN trace: batch r*B against latency.
        #[arg(long)]
        ffn: Option<PathBuf>,
        /// Communication trace: batch B against latency.
        #[arg(long)]
        comm: Option<PathBuf>,
        /// `hw.*` key file; derives slopes for components without a trace.
        #[arg(long)]
        hardware: Option<PathBuf>,
        /// Coefficient file to write; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare simulated and analytic optima from a sweep CSV.
    Report {
        /// Sweep CSV produced by `afd sweep`.
        input: PathBuf,
        /// Also write the per-ratio comparison as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (args, overrides) = match extract_overrides(args) {
        Ok(split) => split,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Optimize { common } => load(&common, &overrides).and_then(|c| cmd_optimize(&c)),
        Command::Simulate { common, trace } => load(&common, &overrides).and_then(|c| cmd_simulate(&c, trace.as_deref())),
        Command::Sweep { common, jobs } => load(&common, &overrides).and_then(|c| cmd_sweep(&c, jobs)),
        Command::Calibrate {
            attention,
            ffn,
            comm,
            hardware,
            out,
        } => no_overrides(&overrides).and_then(|_| cmd_calibrate(attention, ffn, comm, hardware, out)),
        Command::Report { input, out } => no_overrides(&overrides).and_then(|_| cmd_report(&input, out.as_deref())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn no_overrides(overrides: &[(String, String)]) -> CmdResult {
    match overrides.first() {
        Some((key, _)) => Err(ConfigError::new(key.clone(), "config overrides do not apply to this command").into()),
        None => Ok(()),
    }
}

/// Config file, then `--key value` overrides, then the dedicated flags.
fn load(common: &Common, overrides: &[(String, String)]) -> Result<ExperimentConfig, Failure> {
    let mut raw = match &common.config {
        Some(path) => {
            let mut raw = RawConfig::load(path)?;
            raw.anchor_paths(path.parent().unwrap_or(Path::new(".")));
            raw
        }
        None => RawConfig::default(),
    };
    for (key, value) in overrides {
        raw.set(key.clone(), value.clone());
    }
    if let Some(seed) = common.seed {
        raw.set("seed", seed.to_string());
    }
    if let Some(out) = &common.out {
        raw.set("out", out.to_string_lossy().into_owned());
    }
    Ok(ExperimentConfig::new(raw)?)
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn workload(cfg: &ExperimentConfig) -> Result<WorkloadSpec, Failure> {
    let spec = WorkloadSpec::new(cfg.mu_p()?, cfg.p()?, cfg.n()?)
        .map_err(|e| ConfigError::new("workload", e.to_string()))?;
    Ok(spec.with_prefill_dist(cfg.prefill_dist()?))
}

fn cmd_optimize(cfg: &ExperimentConfig) -> CmdResult {
    let coeffs = cfg.coefficients()?;
    let spec = workload(cfg)?;
    let batch = cfg.batch()? as f64;
    let mode = cfg.mode()?;
    let report = optimal_ratio(&coeffs, &spec, batch, mode).map_err(|e| ConfigError::new("workload", e.to_string()))?;
    let (lo, hi) = report.integer_neighbours();
    let mut out = io::stdout().lock();
    let lines = [
        format!("T_bar = {}", report.t_bar),
        format!("r_A = {}", report.r_a),
        format!("r_C = {}", report.r_c),
        format!("r_crit = {}", report.r_crit),
        format!("r_peak = {}", report.r_peak),
        format!("r* = {}", report.r_star),
        format!("regime = {}", report.regime),
        format!("integer candidates = {lo}, {hi}"),
        format!("predicted throughput at r* = {}", report.predicted_throughput_at_r_star),
    ];
    for line in lines {
        writeln!(out, "{line}").context("writing report")?;
    }
    if let Some(path) = cfg.out() {
        let (r_max, step) = cfg.r_grid()?;
        let mut w = csv::Writer::from_writer(open_output(Some(&path))?);
        w.write_record(["r", "theory_throughput"]).context("writing csv")?;
        let steps = (r_max / step).floor() as u64;
        for i in 1..=steps {
            let r = i as f64 * step;
            let thr = predicted_throughput(&coeffs, batch, report.t_bar, r).context("evaluating throughput")?;
            w.write_record([r.to_string(), thr.to_string()]).context("writing csv")?;
        }
        w.flush().context("writing csv")?;
    }
    Ok(())
}

pub const SIMULATE_COLUMNS: [&str; 13] = [
    "r",
    "B",
    "mu_P",
    "mu_D",
    "N",
    "seed",
    "throughput_80",
    "tpot",
    "eta_A",
    "eta_F",
    "T_80",
    "completions_counted",
    "theory_throughput",
];

fn cmd_simulate(cfg: &ExperimentConfig, trace: Option<&Path>) -> CmdResult {
    let coeffs = cfg.coefficients()?;
    let n = cfg.n()?;
    let dist = cfg.prefill_dist()?;
    let point = SweepPoint {
        r: cfg.ratio()?,
        batch: cfg.batch()?,
        mu_p: cfg.mu_p()?,
        mu_d: cfg.mu_d()?,
        seed: cfg.seed()?,
    };
    let spec = point_workload(&point, n, dist).map_err(|e| ConfigError::new("workload", e.to_string()))?;
    let theory = point_theory(&coeffs, &point, &spec, cfg.mode()?);
    let options = RunOptions {
        trace: trace.is_some(),
        ..RunOptions::default()
    };
    let (outcome, m) = simulate_point(&coeffs, &point, n, dist, cfg.stop()?, &options).context("simulation failed")?;
    let mut w = csv::Writer::from_writer(open_output(cfg.out().as_deref())?);
    w.write_record(SIMULATE_COLUMNS).context("writing csv")?;
    w.write_record([
        point.r.to_string(),
        point.batch.to_string(),
        point.mu_p.to_string(),
        point.mu_d.to_string(),
        n.to_string(),
        point.seed.to_string(),
        m.throughput_80.to_string(),
        m.tpot.to_string(),
        m.eta_a.to_string(),
        m.eta_f.to_string(),
        m.t_80.to_string(),
        m.completions_counted.to_string(),
        theory.map(|t| t.1.to_string()).unwrap_or_default(),
    ])
    .context("writing csv")?;
    w.flush().context("writing csv")?;
    if let (Some(path), Some(records)) = (trace, outcome.trace.as_deref()) {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        write_trace_csv(BufWriter::new(file), records).context("writing trace")?;
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> CmdResult {
    let coeffs = cfg.coefficients()?;
    let grid = cfg.grid()?;
    if jobs == Some(0) {
        return Err(ConfigError::new("--jobs", "must be at least 1").into());
    }
    let rows = run_sweep(&grid, &coeffs, jobs).context("sweep failed")?;
    write_sweep_csv(open_output(cfg.out().as_deref())?, &rows).context("writing sweep csv")?;
    let failed = rows.iter().filter(|r| r.metrics.is_err()).count();
    eprintln!("{} grid points, {failed} failed", rows.len());
    Ok(())
}

fn read_input(flag: &str, path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| ConfigError::new(flag, format!("cannot read {}: {e}", path.display())).into())
}

fn cmd_calibrate(
    attention: Option<PathBuf>,
    ffn: Option<PathBuf>,
    comm: Option<PathBuf>,
    hardware: Option<PathBuf>,
    out: Option<PathBuf>,
) -> CmdResult {
    if attention.is_none() && ffn.is_none() && comm.is_none() && hardware.is_none() {
        return Err(ConfigError::new("--attention", "give at least one of --attention, --ffn, --comm or --hardware").into());
    }
    let mut result = RawConfig::default();
    let traces = [
        ("--attention", attention, "A"),
        ("--ffn", ffn, "F"),
        ("--comm", comm, "C"),
    ];
    for (flag, path, tag) in &traces {
        let Some(path) = path else { continue };
        let samples = read_trace_csv(read_input(flag, path)?).with_context(|| format!("{}", path.display()))?;
        let fit = fit_linear(&samples).with_context(|| format!("{}", path.display()))?;
        eprintln!(
            "{}: alpha_{tag} = {} (se {}), beta_{tag} = {}, R^2 = {}, {} samples",
            &flag[2..],
            fit.alpha,
            fit.alpha_se,
            fit.beta,
            fit.r_squared,
            fit.samples
        );
        result.set(format!("coeffs.alpha_{tag}"), fit.alpha.to_string());
        result.set(format!("coeffs.beta_{tag}"), fit.beta.to_string());
    }
    if let Some(path) = hardware {
        let raw = RawConfig::load(&path).map_err(|e| ConfigError::new("--hardware", e.to_string()))?;
        let hw = hardware_params(&raw)?;
        let derived = [
            ("A", derive_attention_slope(&hw)),
            ("F", derive_ffn_slope(&hw)),
            ("C", derive_comm_slope(&hw)),
        ];
        for (tag, slope) in derived {
            let slope = slope.map_err(|e| ConfigError::new("--hardware", e.to_string()))?;
            let key = format!("coeffs.alpha_{tag}");
            if result.get(&key).is_none() {
                eprintln!("hardware: alpha_{tag} = {slope}");
                result.set(key, slope.to_string());
            }
        }
    }
    let mut w = open_output(out.as_deref())?;
    w.write_all(result.serialize().as_bytes()).context("writing coefficients")?;
    w.flush().context("writing coefficients")?;
    Ok(())
}

fn cmd_report(input: &Path, out: Option<&Path>) -> CmdResult {
    let records = read_sweep_csv(read_input("input", input)?).with_context(|| format!("{}", input.display()))?;
    let configs = compare(&records);
    if configs.is_empty() {
        return Err(anyhow::anyhow!("{} has no successful sweep rows", input.display()).into());
    }
    print!("{}", render_report(&configs));
    let flagged = configs.iter().filter(|c| c.flagged).count();
    println!("{} configurations, {flagged} flagged (ratio gap above 10%)", configs.len());
    if let Some(path) = out {
        write_report_csv(open_output(Some(path))?, &configs).context("writing report csv")?;
    }
    Ok(())
}
