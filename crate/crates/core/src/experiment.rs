//! Parameter sweeps over bundle shapes and workloads, their CSV output, and
//! the comparison of simulated optima against the analytic ones.
//!
//! Every grid point draws its workload from a stream seed that depends on the
//! user seed and the workload parameters but not on `r`. All ratios of one
//! workload therefore see the same request sequence, and adding grid points
//! never changes the streams of existing ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{self, HorizonMode};
use crate::metrics::{self, MetricsReport};
use crate::model::{BundleConfig, LatencyCoefficients, ModelError, PrefillDist, WorkloadSpec};
use crate::simcore::{self, RunOptions, SimError, SimOutcome, StopRule};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("sweep csv is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("sweep csv line {line}: {reason}")]
    BadRecord { line: u64, reason: String },
}

/// How long each simulation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopSpec {
    /// Until the stable window (`ceil(0.8 r N)` completions) is complete.
    /// Metrics are identical to a full drain.
    #[default]
    Stable,
    Drain,
    Completions(u64),
}

impl StopSpec {
    pub fn rule(&self, r: u32, n: u64) -> StopRule {
        match *self {
            StopSpec::Stable => StopRule::TotalCompletions(metrics::stable_window_size(r, n) as u64),
            StopSpec::Drain => StopRule::Drain,
            StopSpec::Completions(c) => StopRule::TotalCompletions(c),
        }
    }
}

impl std::str::FromStr for StopSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "stable" => Ok(StopSpec::Stable),
            "drain" => Ok(StopSpec::Drain),
            other => match other.strip_prefix("completions:") {
                Some(n) => n
                    .trim()
                    .parse()
                    .map(StopSpec::Completions)
                    .map_err(|_| format!("bad completion count in `{other}`")),
                None => Err(format!("expected stable, drain or completions:<n>, got `{other}`")),
            },
        }
    }
}

impl std::fmt::Display for StopSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopSpec::Stable => f.write_str("stable"),
            StopSpec::Drain => f.write_str("drain"),
            StopSpec::Completions(n) => write!(f, "completions:{n}"),
        }
    }
}

/// One simulation of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub r: u32,
    pub batch: u32,
    pub mu_p: f64,
    pub mu_d: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub r: Vec<u32>,
    pub batch: Vec<u32>,
    pub mu_p: Vec<f64>,
    pub mu_d: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Requests per attention instance.
    pub n: u64,
    pub prefill_dist: PrefillDist,
    pub mode: HorizonMode,
    pub stop: StopSpec,
}

impl SweepGrid {
    /// Points in config order: batch, then mu_P, mu_D, r, seed.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &batch in &self.batch {
            for &mu_p in &self.mu_p {
                for &mu_d in &self.mu_d {
                    for &r in &self.r {
                        for &seed in &self.seeds {
                            out.push(SweepPoint { r, batch, mu_p, mu_d, seed });
                        }
                    }
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let empty = [
            ("r", self.r.is_empty()),
            ("B", self.batch.is_empty()),
            ("mu_P", self.mu_p.is_empty()),
            ("mu_D", self.mu_d.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(ExperimentError::InvalidGrid(format!("`{name}` has no values")));
        }
        if self.n == 0 {
            return Err(ExperimentError::InvalidGrid("N must be positive".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// RNG seed for one workload: a splitmix64 chain over the user seed and the
/// workload parameters. `r` is deliberately not an input.
pub fn stream_seed(seed: u64, batch: u32, mu_p: f64, p: f64, dist: PrefillDist) -> u64 {
    let dist_tag = match dist {
        PrefillDist::Constant => 0,
        PrefillDist::UniformBounded => 1,
    };
    [batch as u64, mu_p.to_bits(), p.to_bits(), dist_tag]
        .iter()
        .fold(splitmix64(seed), |h, &x| splitmix64(h ^ x))
}

/// Workload of one grid point with its stream seed applied.
pub fn point_workload(
    point: &SweepPoint,
    n: u64,
    dist: PrefillDist,
) -> Result<WorkloadSpec, ModelError> {
    let spec = WorkloadSpec::from_mean_decode(point.mu_p, point.mu_d, n)?.with_prefill_dist(dist);
    let seed = stream_seed(point.seed, point.batch, point.mu_p, spec.p(), dist);
    Ok(spec.with_seed(seed))
}

/// Analytic `(r*, predicted throughput at r)` for a grid point.
pub fn point_theory(
    coeffs: &LatencyCoefficients,
    point: &SweepPoint,
    spec: &WorkloadSpec,
    mode: HorizonMode,
) -> Option<(f64, f64)> {
    let report = analytic::optimal_ratio(coeffs, spec, point.batch as f64, mode).ok()?;
    let thr = analytic::predicted_throughput(coeffs, point.batch as f64, report.t_bar, point.r as f64).ok()?;
    Some((report.r_star, thr))
}

/// Simulates one point and evaluates its metrics.
pub fn simulate_point(
    coeffs: &LatencyCoefficients,
    point: &SweepPoint,
    n: u64,
    dist: PrefillDist,
    stop: StopSpec,
    options: &RunOptions,
) -> Result<(SimOutcome, MetricsReport), ExperimentError> {
    let spec = point_workload(point, n, dist)?;
    let config = BundleConfig::new(point.r, point.batch)?;
    let outcome = simcore::run(&config, coeffs, &spec, stop.rule(point.r, n), options)?;
    let report = metrics::evaluate(&outcome, point.r, n)?;
    Ok((outcome, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub metrics: Result<MetricsReport, String>,
    pub theory_throughput: Option<f64>,
    pub r_star: Option<f64>,
}

/// Runs every grid point on at most `jobs` threads (all cores when `None`).
/// Rows come back in config order; a failing point records its error
/// instead of aborting the sweep.
pub fn run_sweep(
    grid: &SweepGrid,
    coeffs: &LatencyCoefficients,
    jobs: Option<usize>,
) -> Result<Vec<SweepRow>, ExperimentError> {
    grid.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    let points = grid.points();
    let options = RunOptions::default();
    let rows = pool.install(|| {
        points
            .par_iter()
            .map(|point| {
                let theory = point_workload(point, grid.n, grid.prefill_dist)
                    .ok()
                    .and_then(|spec| point_theory(coeffs, point, &spec, grid.mode));
                let metrics = simulate_point(coeffs, point, grid.n, grid.prefill_dist, grid.stop, &options)
                    .map(|(_, m)| m)
                    .map_err(|e| e.to_string());
                SweepRow {
                    point: *point,
                    metrics,
                    r_star: theory.map(|t| t.0),
                    theory_throughput: theory.map(|t| t.1),
                }
            })
            .collect()
    });
    Ok(rows)
}

pub const SWEEP_COLUMNS: [&str; 12] = [
    "r",
    "B",
    "mu_P",
    "mu_D",
    "seed",
    "throughput_80",
    "tpot",
    "eta_A",
    "eta_F",
    "theory_throughput",
    "r_star",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_COLUMNS)?;
    for row in rows {
        let p = &row.point;
        let m = row.metrics.as_ref().ok();
        out.write_record([
            p.r.to_string(),
            p.batch.to_string(),
            p.mu_p.to_string(),
            p.mu_d.to_string(),
            p.seed.to_string(),
            opt(m.map(|m| m.throughput_80)),
            opt(m.map(|m| m.tpot)),
            opt(m.map(|m| m.eta_a)),
            opt(m.map(|m| m.eta_f)),
            opt(row.theory_throughput),
            opt(row.r_star),
            row.metrics.as_ref().err().cloned().unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// The subset of a sweep CSV row the report needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub r: u32,
    pub batch: u32,
    pub mu_p: f64,
    pub mu_d: f64,
    pub throughput_80: Option<f64>,
    pub theory_throughput: Option<f64>,
    pub r_star: Option<f64>,
}

pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<SweepRecord>, ExperimentError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(ExperimentError::MissingColumn(name))
    };
    let (ci_r, ci_b, ci_p, ci_d) = (col("r")?, col("B")?, col("mu_P")?, col("mu_D")?);
    let (ci_thr, ci_th, ci_rs) = (col("throughput_80")?, col("theory_throughput")?, col("r_star")?);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let bad = |what: &str, v: &str| ExperimentError::BadRecord {
            line,
            reason: format!("{what} `{v}` is not a number"),
        };
        let optional = |i: usize, what: &str| -> Result<Option<f64>, ExperimentError> {
            match field(i) {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|_| bad(what, v)),
            }
        };
        out.push(SweepRecord {
            r: field(ci_r).parse().map_err(|_| bad("r", field(ci_r)))?,
            batch: field(ci_b).parse().map_err(|_| bad("B", field(ci_b)))?,
            mu_p: field(ci_p).parse().map_err(|_| bad("mu_P", field(ci_p)))?,
            mu_d: field(ci_d).parse().map_err(|_| bad("mu_D", field(ci_d)))?,
            throughput_80: optional(ci_thr, "throughput_80")?,
            theory_throughput: optional(ci_th, "theory_throughput")?,
            r_star: optional(ci_rs, "r_star")?,
        });
    }
    Ok(out)
}

/// Seed-averaged results at one ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSummary {
    pub r: u32,
    pub sim_throughput: f64,
    pub theory_throughput: Option<f64>,
    /// `1 - sim / theory`: how far the simulation falls below the prediction.
    pub throughput_gap: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigComparison {
    pub batch: u32,
    pub mu_p: f64,
    pub mu_d: f64,
    pub r_star: Option<f64>,
    pub ratios: Vec<RatioSummary>,
    /// Grid ratio with the highest mean simulated throughput.
    pub best_r: u32,
    /// Peak of the parabola through the best grid point and its neighbours.
    pub interpolated_r: f64,
    /// `|best_r - r*| / r*`.
    pub ratio_gap: Option<f64>,
    pub flagged: bool,
}

/// Relative ratio gap above which a configuration is flagged.
pub const FLAG_THRESHOLD: f64 = 0.10;

/// Vertex of the parabola through the maximum of `points` (sorted by x) and
/// its two neighbours. Falls back to the grid maximum at the grid edge.
pub fn interpolated_peak(points: &[(f64, f64)]) -> Option<f64> {
    let best = (0..points.len()).max_by(|&a, &b| points[a].1.total_cmp(&points[b].1))?;
    if best == 0 || best + 1 == points.len() {
        return Some(points[best].0);
    }
    let (x0, y0) = points[best - 1];
    let (x1, y1) = points[best];
    let (x2, y2) = points[best + 1];
    let num = (x1 - x0).powi(2) * (y1 - y2) - (x1 - x2).powi(2) * (y1 - y0);
    let den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
    if den == 0.0 {
        return Some(x1);
    }
    Some((x1 - 0.5 * num / den).clamp(x0, x2))
}

/// Groups successful rows by workload and compares simulated and analytic optima.
pub fn compare(records: &[SweepRecord]) -> Vec<ConfigComparison> {
    type Key = (u32, u64, u64);
    let mut groups: BTreeMap<Key, BTreeMap<u32, Vec<&SweepRecord>>> = BTreeMap::new();
    for rec in records.iter().filter(|r| r.throughput_80.is_some()) {
        groups
            .entry((rec.batch, rec.mu_p.to_bits(), rec.mu_d.to_bits()))
            .or_default()
            .entry(rec.r)
            .or_default()
            .push(rec);
    }
    let mut out = Vec::new();
    for ((batch, mu_p, mu_d), by_r) in groups {
        let ratios: Vec<RatioSummary> = by_r
            .iter()
            .map(|(&r, recs)| {
                let sim = recs.iter().filter_map(|x| x.throughput_80).sum::<f64>() / recs.len() as f64;
                let theory = recs.iter().find_map(|x| x.theory_throughput);
                RatioSummary {
                    r,
                    sim_throughput: sim,
                    theory_throughput: theory,
                    throughput_gap: theory.map(|t| 1.0 - sim / t),
                    seeds: recs.len(),
                }
            })
            .collect();
        let curve: Vec<(f64, f64)> = ratios.iter().map(|s| (s.r as f64, s.sim_throughput)).collect();
        let Some(interpolated_r) = interpolated_peak(&curve) else {
            continue;
        };
        let best_r = ratios
            .iter()
            .max_by(|a, b| a.sim_throughput.total_cmp(&b.sim_throughput))
            .map(|s| s.r)
            .unwrap_or(0);
        let r_star = by_r.values().flatten().find_map(|x| x.r_star);
        let ratio_gap = r_star.map(|rs| (best_r as f64 - rs).abs() / rs);
        out.push(ConfigComparison {
            batch,
            mu_p: f64::from_bits(mu_p),
            mu_d: f64::from_bits(mu_d),
            r_star,
            ratios,
            best_r,
            interpolated_r,
            ratio_gap,
            flagged: ratio_gap.is_some_and(|g| g > FLAG_THRESHOLD),
        });
    }
    out
}

/// Human-readable comparison table.
pub fn render_report(configs: &[ConfigComparison]) -> String {
    let mut s = String::new();
    for c in configs {
        let r_star = c.r_star.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        let gap = c.ratio_gap.map_or("n/a".to_string(), |g| format!("{:.1}%", 100.0 * g));
        let _ = writeln!(
            s,
            "B={} mu_P={} mu_D={}: r*={} sim best r={} (interpolated {:.2}) gap={}{}",
            c.batch,
            c.mu_p,
            c.mu_d,
            r_star,
            c.best_r,
            c.interpolated_r,
            gap,
            if c.flagged { "  FLAGGED" } else { "" }
        );
        let _ = writeln!(s, "  {:>4} {:>12} {:>12} {:>8}", "r", "sim", "theory", "gap");
        for q in &c.ratios {
            let theory = q.theory_throughput.map_or("n/a".to_string(), |t| format!("{t:.5}"));
            let gap = q.throughput_gap.map_or("n/a".to_string(), |g| format!("{:.1}%", 100.0 * g));
            let _ = writeln!(s, "  {:>4} {:>12.5} {:>12} {:>8}", q.r, q.sim_throughput, theory, gap);
        }
    }
    s
}

/// Long-format report CSV: one row per (workload, r).
pub fn write_report_csv<W: Write>(w: W, configs: &[ConfigComparison]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "B",
        "mu_P",
        "mu_D",
        "r",
        "sim_throughput",
        "theory_throughput",
        "throughput_gap",
        "seeds",
        "r_star",
        "r_sim_best",
        "r_sim_interpolated",
        "ratio_gap",
        "flagged",
    ])?;
    for c in configs {
        for q in &c.ratios {
            out.write_record([
                c.batch.to_string(),
                c.mu_p.to_string(),
                c.mu_d.to_string(),
                q.r.to_string(),
                q.sim_throughput.to_string(),
                opt(q.theory_throughput),
                opt(q.throughput_gap),
                q.seeds.to_string(),
                opt(c.r_star),
                c.best_r.to_string(),
                c.interpolated_r.to_string(),
                opt(c.ratio_gap),
                c.flagged.to_string(),
            ])?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
