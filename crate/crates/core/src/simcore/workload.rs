use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use super::SimError;
use crate::model::{BundleConfig, PrefillDist, WorkloadSpec};

/// One decode request. `decode_budget` is drawn up front; the request
/// completes on the attention step that emits its last token.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: u64,
    pub prefill_len: u32,
    pub decode_budget: u32,
    /// FCFS position in the buffer.
    pub arrival_index: u64,
    /// Time the request was taken from the buffer and placed into a slot.
    pub dispatch_time: Option<f64>,
    /// Start of the first attention step that includes this request.
    pub start_decode_time: Option<f64>,
    pub completion_time: Option<f64>,
    pub tokens_emitted: u32,
}

impl Request {
    /// A fresh request at buffer position `id`.
    pub fn new(id: u64, prefill_len: u32, decode_budget: u32) -> Self {
        Self {
            id,
            prefill_len,
            decode_budget,
            arrival_index: id,
            dispatch_time: None,
            start_decode_time: None,
            completion_time: None,
            tokens_emitted: 0,
        }
    }

    /// Contribution of this request to its slot's token load.
    pub fn token_load(&self) -> u64 {
        self.prefill_len as u64 + self.tokens_emitted as u64
    }

    pub fn is_complete(&self) -> bool {
        self.completion_time.is_some()
    }
}

/// Draws `total_requests` requests from `spec` using `spec.seed`.
///
/// Decode budgets are `1 + Geo(p)` on `{1, 2, ...}`, so every request spends
/// at least one decode step in a slot and the per-step continuation
/// probability is `1 - p` regardless of age. The buffer must hold at least
/// enough requests to fill both waves of `bundle`.
pub fn build_workload(
    spec: &WorkloadSpec,
    bundle: &BundleConfig,
    total_requests: usize,
) -> Result<Vec<Request>, SimError> {
    let needed = 2 * bundle.r() as usize * bundle.batch() as usize;
    if total_requests < needed {
        return Err(SimError::InsufficientRequests {
            have: total_requests,
            needed,
        });
    }
    draw_requests(spec, total_requests)
}

/// The request stream without the wave-filling precondition.
pub fn draw_requests(spec: &WorkloadSpec, total_requests: usize) -> Result<Vec<Request>, SimError> {
    let mu_p = spec.mu_p();
    if mu_p.fract() != 0.0 || mu_p < 1.0 || mu_p > (u32::MAX / 2) as f64 {
        return Err(SimError::InvalidWorkload(format!(
            "simulated prefill mean must be a positive integer, got {mu_p}"
        )));
    }
    let mu_p = mu_p as u32;
    let decode = Geometric::new(spec.p())
        .map_err(|e| SimError::InvalidWorkload(format!("termination probability: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(total_requests);
    for i in 0..total_requests {
        let extra = decode.sample(&mut rng).min(u32::MAX as u64 - 1) as u32;
        let prefill_len = match spec.prefill_dist {
            PrefillDist::Constant => mu_p,
            PrefillDist::UniformBounded => rng.random_range(1..=2 * mu_p - 1),
        };
        out.push(Request {
            id: i as u64,
            prefill_len,
            decode_budget: 1 + extra,
            arrival_index: i as u64,
            dispatch_time: None,
            start_decode_time: None,
            completion_time: None,
            tokens_emitted: 0,
        });
    }
    Ok(out)
}
