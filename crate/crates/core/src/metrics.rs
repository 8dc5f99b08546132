//! Stable throughput, TPOT and idle ratios computed from a simulation run.
//!
//! Throughput is measured over the first `ceil(0.8 r N)` completions so the
//! drain tail (partially filled batches) does not distort it. Idle ratios use
//! the same window.

use thiserror::Error;

use crate::simcore::{CompletedRequest, SimOutcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("need {needed} completions for the stable window, log has {have}")]
    InsufficientCompletions { needed: usize, have: usize },
    #[error("measurement window must be positive, got {0}")]
    EmptyWindow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Tokens per cycle per instance over the stable window.
    pub throughput_80: f64,
    /// Cycles per output token, averaged per request.
    pub tpot: f64,
    pub eta_a: f64,
    pub eta_f: f64,
    /// End of the stable window.
    pub t_80: f64,
    pub completions_counted: usize,
}

/// `ceil(0.8 * r * n)`.
pub fn stable_window_size(r: u32, n_per_instance: u64) -> usize {
    let total = r as u64 * n_per_instance;
    ((8 * total).div_ceil(10)) as usize
}

/// The first `count` completions ordered by `(completion_time, arrival_index)`.
fn first_completions(log: &[CompletedRequest], count: usize) -> Vec<&CompletedRequest> {
    let mut sorted: Vec<&CompletedRequest> = log.iter().collect();
    sorted.sort_by(|a, b| {
        a.completion_time
            .total_cmp(&b.completion_time)
            .then(a.arrival_index.cmp(&b.arrival_index))
    });
    sorted.truncate(count);
    sorted
}

/// Returns `(throughput_80, T_80)`: the tokens of the first `ceil(0.8 r N)`
/// completed requests divided by the time the last of them completed, shared
/// across the `r + 1` instances of the bundle.
pub fn stable_throughput(
    log: &[CompletedRequest],
    r: u32,
    n_per_instance: u64,
) -> Result<(f64, f64), MetricsError> {
    let needed = stable_window_size(r, n_per_instance);
    if needed == 0 || log.len() < needed {
        return Err(MetricsError::InsufficientCompletions {
            needed,
            have: log.len(),
        });
    }
    let window = first_completions(log, needed);
    let t_80 = window[needed - 1].completion_time;
    if t_80 <= 0.0 {
        return Err(MetricsError::EmptyWindow(t_80));
    }
    let tokens: u64 = window.iter().map(|c| c.tokens_emitted as u64).sum();
    Ok((tokens as f64 / t_80 / (r as f64 + 1.0), t_80))
}

/// Mean over requests of decode time divided by tokens emitted.
pub fn tpot<'a, I>(log: I) -> f64
where
    I: IntoIterator<Item = &'a CompletedRequest>,
{
    let (sum, count) = log.into_iter().fold((0.0, 0usize), |(s, n), c| {
        let tokens = c.tokens_emitted.max(1) as f64;
        (s + (c.completion_time - c.start_decode_time) / tokens, n + 1)
    });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `eta_A` is the mean over attention instances of idle time over `t_total`;
/// `eta_F` is the FFN idle time over `t_total`.
pub fn idle_ratios(
    attention_idle: &[f64],
    ffn_idle: f64,
    t_total: f64,
) -> Result<(f64, f64), MetricsError> {
    if !(t_total > 0.0) {
        return Err(MetricsError::EmptyWindow(t_total));
    }
    let r = attention_idle.len().max(1) as f64;
    let eta_a = attention_idle.iter().map(|t| t / t_total).sum::<f64>() / r;
    let eta_f = ffn_idle / t_total;
    Ok((eta_a.clamp(0.0, 1.0), eta_f.clamp(0.0, 1.0)))
}

/// All three metrics over the stable window of `outcome`.
pub fn evaluate(outcome: &SimOutcome, r: u32, n_per_instance: u64) -> Result<MetricsReport, MetricsError> {
    let (throughput_80, t_80) = stable_throughput(&outcome.completions, r, n_per_instance)?;
    let needed = stable_window_size(r, n_per_instance);
    let window = first_completions(&outcome.completions, needed);
    let tpot = tpot(window.iter().copied());
    let (eta_a, eta_f) = idle_ratios(&outcome.attention_idle_until(t_80), outcome.ffn_idle_until(t_80), t_80)?;
    Ok(MetricsReport {
        throughput_80,
        tpot,
        eta_a,
        eta_f,
        t_80,
        completions_counted: needed,
    })
}
