//! Closed-form token-load expectations, regime boundaries and the optimal
//! attention-to-FFN ratio.
//!
//! The ratio `r` is real-valued here: `r = 3.5` stands for a 7A-2F deployment.

use std::fmt;

use thiserror::Error;

use crate::model::{LatencyCoefficients, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
    #[error(
        "horizon-average load is non-positive ({load}); N = {n} is too small for B = {batch} \
         (need N > {min_n:.3})"
    )]
    NonPositiveLoad {
        load: f64,
        n: u64,
        batch: f64,
        min_n: f64,
    },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> AnalyticError {
    AnalyticError::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

fn check_batch(batch: f64) -> Result<(), AnalyticError> {
    if batch.is_finite() && batch >= 1.0 {
        Ok(())
    } else {
        Err(invalid("B", format!("must be >= 1, got {batch}")))
    }
}

fn check_p(p: f64) -> Result<(), AnalyticError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(invalid("p", format!("must lie in (0, 1), got {p}")))
    }
}

fn check_mu_p(mu_p: f64) -> Result<(), AnalyticError> {
    if mu_p.is_finite() && mu_p > 0.0 {
        Ok(())
    } else {
        Err(invalid("mu_P", format!("must be positive, got {mu_p}")))
    }
}

/// Expected prefill load of one microbatch, `B * mu_P`, independent of the step.
pub fn expected_prefill_load(batch: f64, mu_p: f64) -> Result<f64, AnalyticError> {
    check_batch(batch)?;
    check_mu_p(mu_p)?;
    Ok(batch * mu_p)
}

/// Expected decode load after `step` decode steps from an all-fresh microbatch:
/// `B (1-p)/p (1 - (1-p)^k)`. `step = f64::INFINITY` yields the saturation
/// value `B * mu_D`.
pub fn expected_decode_load(batch: f64, p: f64, step: f64) -> Result<f64, AnalyticError> {
    check_batch(batch)?;
    check_p(p)?;
    if step.is_nan() || step < 0.0 {
        return Err(invalid("k", format!("must be >= 0, got {step}")));
    }
    let mu_d = (1.0 - p) / p;
    Ok(batch * mu_d * (1.0 - (1.0 - p).powf(step)))
}

/// Sum of [`expected_prefill_load`] and [`expected_decode_load`].
pub fn expected_token_load(batch: f64, mu_p: f64, p: f64, step: f64) -> Result<f64, AnalyticError> {
    Ok(expected_prefill_load(batch, mu_p)? + expected_decode_load(batch, p, step)?)
}

/// Which closed form to use for the horizon-average load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HorizonMode {
    /// Keeps the `-(1-p)/p * B^2 / N` warm-up correction.
    #[default]
    FiniteN,
    /// The `N -> infinity` limit `B (mu_P + mu_D)`.
    Asymptotic,
}

impl HorizonMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            HorizonMode::FiniteN => "finite",
            HorizonMode::Asymptotic => "asymptotic",
        }
    }
}

impl std::str::FromStr for HorizonMode {
    type Err = AnalyticError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "finite" | "finiten" | "finite_n" => Ok(HorizonMode::FiniteN),
            "asymptotic" => Ok(HorizonMode::Asymptotic),
            other => Err(invalid(
                "mode",
                format!("unknown mode `{other}` (expected finite|asymptotic)"),
            )),
        }
    }
}

/// Average expected token load over the `N / (B p)` steps an attention
/// instance needs to serve `n` requests.
pub fn horizon_average_load(
    batch: f64,
    mu_p: f64,
    p: f64,
    n: u64,
    mode: HorizonMode,
) -> Result<f64, AnalyticError> {
    check_batch(batch)?;
    check_mu_p(mu_p)?;
    check_p(p)?;
    if n == 0 {
        return Err(invalid("N", "must be at least 1"));
    }
    let mu_d = (1.0 - p) / p;
    let asymptotic = batch * (mu_p + mu_d);
    match mode {
        HorizonMode::Asymptotic => Ok(asymptotic),
        HorizonMode::FiniteN => {
            let load = asymptotic - mu_d * batch * batch / n as f64;
            if load > 0.0 {
                Ok(load)
            } else {
                Err(AnalyticError::NonPositiveLoad {
                    load,
                    n,
                    batch,
                    min_n: batch * mu_d / (mu_p + mu_d),
                })
            }
        }
    }
}

/// The four regime boundaries together with the latencies that produced them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeBoundaries {
    /// Ratio at which FFN latency catches up with attention latency.
    pub r_a: f64,
    /// Ratio at which FFN latency catches up with communication latency.
    pub r_c: f64,
    /// Start of the FFN-bound regime, `max(r_a, r_c)`.
    pub r_crit: f64,
    /// Interior maximiser of FFN-bound throughput, `sqrt(beta_F / (alpha_F B))`.
    pub r_peak: f64,
    pub t_bar_a: f64,
    pub t_bar_c: f64,
}

/// Computes `r_A`, `r_C`, `r_crit` and `r_peak` for horizon load `t_bar`.
/// Negative `r_A`/`r_C` are legal and mean the corresponding regime is empty.
pub fn regime_boundaries(
    coeffs: &LatencyCoefficients,
    batch: f64,
    t_bar: f64,
) -> Result<RegimeBoundaries, AnalyticError> {
    check_batch(batch)?;
    if !(t_bar.is_finite() && t_bar >= 0.0) {
        return Err(invalid("T_bar", format!("must be >= 0, got {t_bar}")));
    }
    let ffn_slope = coeffs.alpha_f() * batch;
    let t_bar_a = coeffs.alpha_a() * t_bar + coeffs.beta_a();
    let t_bar_c = coeffs.alpha_c() * batch + coeffs.beta_c();
    let r_a = (t_bar_a - coeffs.beta_f()) / ffn_slope;
    let r_c = (t_bar_c - coeffs.beta_f()) / ffn_slope;
    let r_crit = (t_bar_a.max(t_bar_c) - coeffs.beta_f()) / ffn_slope;
    let r_peak = (coeffs.beta_f() / ffn_slope).sqrt();
    Ok(RegimeBoundaries {
        r_a,
        r_c,
        r_crit,
        r_peak,
        t_bar_a,
        t_bar_c,
    })
}

/// Which component pins the cycle time at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    AttentionBottleneck,
    CommBottleneck,
    FfnBottleneck,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::AttentionBottleneck => "AttentionBottleneck",
            Regime::CommBottleneck => "CommBottleneck",
            Regime::FfnBottleneck => "FfnBottleneck",
        })
    }
}

/// Everything the capacity planner reports for one workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    pub r_a: f64,
    pub r_c: f64,
    pub r_crit: f64,
    pub r_peak: f64,
    pub r_star: f64,
    pub regime: Regime,
    pub t_bar_a: f64,
    pub t_bar_c: f64,
    pub t_bar: f64,
    pub batch: f64,
    pub predicted_throughput_at_r_star: f64,
}

impl RegimeReport {
    /// Integer ratios on either side of `r_star` (equal when `r_star` is integral).
    pub fn integer_neighbours(&self) -> (u32, u32) {
        let lo = self.r_star.floor().max(1.0) as u32;
        let hi = self.r_star.ceil().max(1.0) as u32;
        (lo, hi)
    }
}

/// Optimal ratio `r* = max(r_A, r_C, r_peak)` with `T_bar` taken from
/// [`horizon_average_load`].
pub fn optimal_ratio(
    coeffs: &LatencyCoefficients,
    workload: &WorkloadSpec,
    batch: f64,
    mode: HorizonMode,
) -> Result<RegimeReport, AnalyticError> {
    let t_bar = horizon_average_load(batch, workload.mu_p(), workload.p(), workload.n(), mode)?;
    optimal_ratio_for_load(coeffs, batch, t_bar)
}

/// [`optimal_ratio`] for an already known horizon load.
pub fn optimal_ratio_for_load(
    coeffs: &LatencyCoefficients,
    batch: f64,
    t_bar: f64,
) -> Result<RegimeReport, AnalyticError> {
    let b = regime_boundaries(coeffs, batch, t_bar)?;
    // Ties go Attention > Comm > FFN.
    let (r_star, regime) = if b.r_a >= b.r_c && b.r_a >= b.r_peak {
        (b.r_a, Regime::AttentionBottleneck)
    } else if b.r_c >= b.r_peak {
        (b.r_c, Regime::CommBottleneck)
    } else {
        (b.r_peak, Regime::FfnBottleneck)
    };
    let predicted = r_star * batch / ((r_star + 1.0) * (coeffs.alpha_f() * r_star * batch + coeffs.beta_f()));
    Ok(RegimeReport {
        r_a: b.r_a,
        r_c: b.r_c,
        r_crit: b.r_crit,
        r_peak: b.r_peak,
        r_star,
        regime,
        t_bar_a: b.t_bar_a,
        t_bar_c: b.t_bar_c,
        t_bar,
        batch,
        predicted_throughput_at_r_star: predicted,
    })
}

/// Per-instance decode throughput `rB / ((r + 1) tau)` with
/// `tau = max(t_A(T_bar), t_C(B), t_F(rB))`, in tokens per cycle per instance.
pub fn predicted_throughput(
    coeffs: &LatencyCoefficients,
    batch: f64,
    t_bar: f64,
    r: f64,
) -> Result<f64, AnalyticError> {
    check_batch(batch)?;
    if !(r.is_finite() && r > 0.0) {
        return Err(invalid("r", format!("must be positive, got {r}")));
    }
    if !(t_bar.is_finite() && t_bar >= 0.0) {
        return Err(invalid("T_bar", format!("must be >= 0, got {t_bar}")));
    }
    let t_a = coeffs.alpha_a() * t_bar + coeffs.beta_a();
    let t_c = coeffs.alpha_c() * batch + coeffs.beta_c();
    let t_f = coeffs.alpha_f() * r * batch + coeffs.beta_f();
    let tau = t_a.max(t_c).max(t_f);
    Ok(r * batch / ((r + 1.0) * tau))
}
