//! Shared domain types and the three linear latency models.
//!
//! All latencies are real-valued cycles. Coefficients are checked once when a
//! [`LatencyCoefficients`] value is built; the latency functions only check
//! their load argument.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("coefficient `{name}` is invalid: {value} ({reason})")]
    InvalidCoefficient {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{what} must be a finite non-negative number, got {value}")]
    NegativeLoad { what: &'static str, value: f64 },
    #[error("workload parameter `{name}` is invalid: {reason}")]
    InvalidWorkload { name: &'static str, reason: String },
    #[error("bundle parameter `{name}` must be at least 1")]
    InvalidBundle { name: &'static str },
}

/// Slopes and intercepts of the attention, FFN and communication latency lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyCoefficients {
    alpha_a: f64,
    beta_a: f64,
    alpha_f: f64,
    beta_f: f64,
    alpha_c: f64,
    beta_c: f64,
}

impl LatencyCoefficients {
    /// Baseline coefficients: attention 0.00165 cycles/token + 50, FFN
    /// 0.083 cycles/request + 100, round-trip communication 0.022 cycles/token + 20.
    pub const BASELINE: LatencyCoefficients = LatencyCoefficients {
        alpha_a: 0.00165,
        beta_a: 50.0,
        alpha_f: 0.083,
        beta_f: 100.0,
        alpha_c: 0.022,
        beta_c: 20.0,
    };

    /// Builds a coefficient set. Slopes must be positive, intercepts non-negative.
    pub fn new(
        alpha_a: f64,
        beta_a: f64,
        alpha_f: f64,
        beta_f: f64,
        alpha_c: f64,
        beta_c: f64,
    ) -> Result<Self, ModelError> {
        check_slope("alpha_A", alpha_a)?;
        check_intercept("beta_A", beta_a)?;
        check_slope("alpha_F", alpha_f)?;
        check_intercept("beta_F", beta_f)?;
        check_slope("alpha_C", alpha_c)?;
        check_intercept("beta_C", beta_c)?;
        Ok(Self {
            alpha_a,
            beta_a,
            alpha_f,
            beta_f,
            alpha_c,
            beta_c,
        })
    }

    /// Like [`new`](Self::new) but allows a zero communication slope, which
    /// models a link whose cost is pure startup latency.
    pub fn with_free_bandwidth(
        alpha_a: f64,
        beta_a: f64,
        alpha_f: f64,
        beta_f: f64,
        beta_c: f64,
    ) -> Result<Self, ModelError> {
        let mut c = Self::new(alpha_a, beta_a, alpha_f, beta_f, 1.0, beta_c)?;
        c.alpha_c = 0.0;
        Ok(c)
    }

    pub fn alpha_a(&self) -> f64 {
        self.alpha_a
    }
    pub fn beta_a(&self) -> f64 {
        self.beta_a
    }
    pub fn alpha_f(&self) -> f64 {
        self.alpha_f
    }
    pub fn beta_f(&self) -> f64 {
        self.beta_f
    }
    pub fn alpha_c(&self) -> f64 {
        self.alpha_c
    }
    pub fn beta_c(&self) -> f64 {
        self.beta_c
    }

    /// `(name, value)` pairs in canonical order, using the config key suffixes.
    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("alpha_A", self.alpha_a),
            ("beta_A", self.beta_a),
            ("alpha_F", self.alpha_f),
            ("beta_F", self.beta_f),
            ("alpha_C", self.alpha_c),
            ("beta_C", self.beta_c),
        ]
    }
}

fn check_slope(name: &'static str, value: f64) -> Result<(), ModelError> {
    if !value.is_finite() {
        return Err(ModelError::InvalidCoefficient {
            name,
            value,
            reason: "not finite",
        });
    }
    if value <= 0.0 {
        return Err(ModelError::InvalidCoefficient {
            name,
            value,
            reason: "slope must be positive",
        });
    }
    Ok(())
}

fn check_intercept(name: &'static str, value: f64) -> Result<(), ModelError> {
    if !value.is_finite() {
        return Err(ModelError::InvalidCoefficient {
            name,
            value,
            reason: "not finite",
        });
    }
    if value < 0.0 {
        return Err(ModelError::InvalidCoefficient {
            name,
            value,
            reason: "intercept must be non-negative",
        });
    }
    Ok(())
}

fn check_load(what: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::NegativeLoad { what, value })
    }
}

/// Attention step latency for a microbatch holding `token_load` KV tokens.
pub fn attention_latency(coeffs: &LatencyCoefficients, token_load: f64) -> Result<f64, ModelError> {
    check_load("token load", token_load)?;
    Ok(coeffs.alpha_a * token_load + coeffs.beta_a)
}

/// FFN step latency for an aggregated batch of `aggregated_batch` requests
/// (`r * B`; real-valued because the analytic ratio is real).
pub fn ffn_latency(coeffs: &LatencyCoefficients, aggregated_batch: f64) -> Result<f64, ModelError> {
    check_load("aggregated batch", aggregated_batch)?;
    Ok(coeffs.alpha_f * aggregated_batch + coeffs.beta_f)
}

/// Round-trip activation transfer latency for one attention instance.
pub fn comm_latency(coeffs: &LatencyCoefficients, batch: f64) -> Result<f64, ModelError> {
    check_load("microbatch size", batch)?;
    Ok(coeffs.alpha_c * batch + coeffs.beta_c)
}

/// Splits a round-trip communication latency into its attention-to-FFN and
/// FFN-to-attention legs. The legs sum back to `round_trip` exactly.
pub fn split_round_trip(round_trip: f64) -> (f64, f64) {
    let a2f = round_trip / 2.0;
    (a2f, round_trip - a2f)
}

/// How prefill lengths are drawn in the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrefillDist {
    /// Every request has exactly the mean prefill length.
    #[default]
    Constant,
    /// Integer-uniform on `[1, 2 * mu_P - 1]`.
    UniformBounded,
}

impl PrefillDist {
    pub fn as_str(&self) -> &'static str {
        match self {
            PrefillDist::Constant => "constant",
            PrefillDist::UniformBounded => "uniform",
        }
    }
}

impl std::str::FromStr for PrefillDist {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" => Ok(PrefillDist::Constant),
            "uniform" | "uniformbounded" | "uniform_bounded" => Ok(PrefillDist::UniformBounded),
            other => Err(ModelError::InvalidWorkload {
                name: "prefill_dist",
                reason: format!("unknown distribution `{other}` (expected constant|uniform)"),
            }),
        }
    }
}

/// Workload statistics: mean prefill, per-step termination probability, and
/// the number of requests each attention instance serves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadSpec {
    mu_p: f64,
    p: f64,
    n: u64,
    pub seed: u64,
    pub prefill_dist: PrefillDist,
}

impl WorkloadSpec {
    pub fn new(mu_p: f64, p: f64, n: u64) -> Result<Self, ModelError> {
        if !(mu_p.is_finite() && mu_p > 0.0) {
            return Err(ModelError::InvalidWorkload {
                name: "mu_P",
                reason: format!("must be positive, got {mu_p}"),
            });
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(ModelError::InvalidWorkload {
                name: "p",
                reason: format!("must lie strictly between 0 and 1, got {p}"),
            });
        }
        if n == 0 {
            return Err(ModelError::InvalidWorkload {
                name: "N",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            mu_p,
            p,
            n,
            seed: 0,
            prefill_dist: PrefillDist::Constant,
        })
    }

    /// Builds a workload from the mean decode length instead of `p`.
    pub fn from_mean_decode(mu_p: f64, mu_d: f64, n: u64) -> Result<Self, ModelError> {
        if !(mu_d.is_finite() && mu_d > 0.0) {
            return Err(ModelError::InvalidWorkload {
                name: "mu_D",
                reason: format!("must be positive, got {mu_d}"),
            });
        }
        Self::new(mu_p, termination_probability(mu_d), n)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_prefill_dist(mut self, dist: PrefillDist) -> Self {
        self.prefill_dist = dist;
        self
    }

    pub fn mu_p(&self) -> f64 {
        self.mu_p
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn n(&self) -> u64 {
        self.n
    }
    /// Mean decode length `(1 - p) / p`.
    pub fn mu_d(&self) -> f64 {
        mean_decode_length(self.p)
    }
}

/// `p = 1 / (mu_D + 1)`.
pub fn termination_probability(mu_d: f64) -> f64 {
    1.0 / (mu_d + 1.0)
}

/// `mu_D = (1 - p) / p`.
pub fn mean_decode_length(p: f64) -> f64 {
    (1.0 - p) / p
}

/// Simulated bundle shape: `r` attention instances sharing one FFN server,
/// each running microbatches of `batch` requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleConfig {
    r: u32,
    batch: u32,
}

impl BundleConfig {
    pub fn new(r: u32, batch: u32) -> Result<Self, ModelError> {
        if r == 0 {
            return Err(ModelError::InvalidBundle { name: "r" });
        }
        if batch == 0 {
            return Err(ModelError::InvalidBundle { name: "B" });
        }
        Ok(Self { r, batch })
    }

    pub fn r(&self) -> u32 {
        self.r
    }
    pub fn batch(&self) -> u32 {
        self.batch
    }
}
