//! Latency coefficients from measurements or from hardware parameters.
//!
//! Intercepts are only ever fitted from traces; the first-principles
//! derivations give slopes.

use std::io::Read;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrateError {
    #[error("need at least two samples with distinct loads (got {samples} samples, {distinct} distinct loads)")]
    DegenerateDesign { samples: usize, distinct: usize },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("hardware parameter `{name}` is invalid: {reason}")]
    InvalidHardware { name: &'static str, reason: String },
}

/// One measured `(load, latency)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub load: f64,
    pub latency: f64,
}

impl TraceSample {
    pub fn new(load: f64, latency: f64) -> Result<Self, CalibrateError> {
        if !(load.is_finite() && load >= 0.0) {
            return Err(CalibrateError::InvalidSample(format!("load must be >= 0, got {load}")));
        }
        if !(latency.is_finite() && latency > 0.0) {
            return Err(CalibrateError::InvalidSample(format!(
                "latency must be > 0, got {latency}"
            )));
        }
        Ok(Self { load, latency })
    }
}

/// Ordinary least-squares line `latency = alpha * load + beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    /// Standard error of the slope (zero for two-point or noiseless fits).
    pub alpha_se: f64,
    pub beta_se: f64,
    pub samples: usize,
}

pub fn fit_linear(samples: &[TraceSample]) -> Result<LinearFit, CalibrateError> {
    let n = samples.len();
    let first = samples.first().map(|s| s.load);
    let distinct_loads = samples.iter().any(|s| Some(s.load) != first);
    if n < 2 || !distinct_loads {
        let mut loads: Vec<f64> = samples.iter().map(|s| s.load).collect();
        loads.sort_by(f64::total_cmp);
        loads.dedup();
        return Err(CalibrateError::DegenerateDesign {
            samples: n,
            distinct: loads.len(),
        });
    }
    let nf = n as f64;
    let mean_x = samples.iter().map(|s| s.load).sum::<f64>() / nf;
    let mean_y = samples.iter().map(|s| s.latency).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for s in samples {
        let dx = s.load - mean_x;
        let dy = s.latency - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let alpha = sxy / sxx;
    let beta = mean_y - alpha * mean_x;
    let ss_res: f64 = samples
        .iter()
        .map(|s| {
            let e = s.latency - (alpha * s.load + beta);
            e * e
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let (alpha_se, beta_se) = if n > 2 {
        let sigma2 = ss_res / (nf - 2.0);
        let a = (sigma2 / sxx).sqrt();
        let b = (sigma2 * (1.0 / nf + mean_x * mean_x / sxx)).sqrt();
        (a, b)
    } else {
        (0.0, 0.0)
    };
    Ok(LinearFit {
        alpha,
        beta,
        r_squared,
        alpha_se,
        beta_se,
        samples: n,
    })
}

/// Reads a two-column `load,latency` CSV with a one-line header.
pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceSample>, CalibrateError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CalibrateError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(CalibrateError::Malformed {
                line,
                reason: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let parse = |i: usize, what: &str| -> Result<f64, CalibrateError> {
            record[i].parse::<f64>().map_err(|_| CalibrateError::Malformed {
                line,
                reason: format!("{what} `{}` is not a number", &record[i]),
            })
        };
        let sample = TraceSample::new(parse(0, "load")?, parse(1, "latency")?).map_err(|e| {
            CalibrateError::Malformed {
                line,
                reason: e.to_string(),
            }
        })?;
        out.push(sample);
    }
    Ok(out)
}

/// Hardware and model parameters for first-principles slope estimates.
/// Bandwidths are bytes per cycle, compute is FLOPs per cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardwareParams {
    pub pi_peak: f64,
    pub beta_hbm: f64,
    pub eta_mem: f64,
    pub eta_compute: f64,
    pub beta_net: f64,
    pub n_expert: u32,
    pub n_expert_per_card: u32,
    pub k_route: u32,
    pub mtp_depth: u32,
    pub hidden: u32,
    pub d_expert: u32,
    /// Compressed KV width per token (latent plus rope dimensions).
    pub d_kv: u32,
}

impl HardwareParams {
    pub fn validate(&self) -> Result<(), CalibrateError> {
        let positive = [
            ("pi_peak", self.pi_peak),
            ("beta_HBM", self.beta_hbm),
            ("beta_net", self.beta_net),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CalibrateError::InvalidHardware {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        for (name, v) in [("eta_mem", self.eta_mem), ("eta_compute", self.eta_compute)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(CalibrateError::InvalidHardware {
                    name,
                    reason: format!("must lie in (0, 1], got {v}"),
                });
            }
        }
        let counts = [
            ("N_expert", self.n_expert),
            ("N_expert_per_card", self.n_expert_per_card),
            ("k_route", self.k_route),
            ("H", self.hidden),
            ("d_expert", self.d_expert),
            ("d_kv", self.d_kv),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CalibrateError::InvalidHardware {
                    name,
                    reason: "must be positive".into(),
                });
            }
        }
        if self.k_route > self.n_expert {
            return Err(CalibrateError::InvalidHardware {
                name: "k_route",
                reason: format!("{} exceeds N_expert = {}", self.k_route, self.n_expert),
            });
        }
        Ok(())
    }

    /// Fraction of the global batch that lands on one expert:
    /// `k (1 + mtp_depth) / N_expert`.
    pub fn expert_batch_factor(&self) -> f64 {
        self.k_route as f64 * (1.0 + self.mtp_depth as f64) / self.n_expert as f64
    }
}

/// KV bytes per token (two bytes per element).
pub fn kv_bytes_per_token(d_kv: u32) -> f64 {
    2.0 * d_kv as f64
}

/// Activation bytes per routed token: one byte in, two bytes out per hidden unit.
pub fn comm_bytes_per_token(hidden: u32) -> f64 {
    3.0 * hidden as f64
}

/// Memory-bound attention slope: KV bytes per token over effective HBM bandwidth.
pub fn derive_attention_slope(hw: &HardwareParams) -> Result<f64, CalibrateError> {
    hw.validate()?;
    Ok(kv_bytes_per_token(hw.d_kv) / (hw.beta_hbm * hw.eta_mem))
}

/// Compute-bound FFN slope per request of the aggregated batch.
pub fn derive_ffn_slope(hw: &HardwareParams) -> Result<f64, CalibrateError> {
    hw.validate()?;
    let flops_per_expert_token = 6.0 * hw.hidden as f64 * hw.d_expert as f64;
    let per_card = hw.n_expert_per_card as f64 * flops_per_expert_token / (hw.pi_peak * hw.eta_compute);
    Ok(per_card * hw.expert_batch_factor())
}

/// Bandwidth-bound communication slope per request.
pub fn derive_comm_slope(hw: &HardwareParams) -> Result<f64, CalibrateError> {
    hw.validate()?;
    let per_card = hw.n_expert_per_card as f64 * comm_bytes_per_token(hw.hidden) / hw.beta_net;
    Ok(per_card * hw.expert_batch_factor())
}
