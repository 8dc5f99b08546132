#![allow(dead_code)]

use afd_core::analytic::expected_decode_load;
use afd_core::model::{BundleConfig, LatencyCoefficients, PrefillDist, WorkloadSpec};
use afd_core::simcore::{self, Request, RunOptions, StopRule, TraceKind, TraceRecord};

pub const BASE: LatencyCoefficients = LatencyCoefficients::BASELINE;

pub fn traced() -> RunOptions {
    RunOptions {
        trace: true,
        check_invariants: true,
        probe_steps: 0,
    }
}

/// Hand-built schedule for r = 1, B = 1 with two requests of prefill 100:
/// wave 0 holds a request with budget 2, wave 1 one with budget 1.
/// Returns the trace and the completion times of both requests.
pub fn hand_schedule() -> (Vec<TraceRecord>, f64, f64) {
    use TraceKind::*;
    // Round trip 0.022 * 1 + 20, split evenly.
    let leg = 20.022 / 2.0;
    let attn_first = 0.00165 * 100.0 + 50.0; // 50.165
    let attn_second = 0.00165 * 101.0 + 50.0;
    let ffn = 0.083 * 1.0 + 100.0; // 100.083

    let w0_attn_end = attn_first;
    let w1_attn_end = w0_attn_end + attn_first;
    let w0_arrive = w0_attn_end + leg;
    let w0_ffn_end = w0_arrive + ffn;
    let w1_arrive = w1_attn_end + leg;
    let w0_back = w0_ffn_end + leg;
    // Wave 1 waited for the FFN; its request already finished but the wave
    // still passes through the FFN with the batch it started with.
    let w1_ffn_end = w0_ffn_end + ffn;
    let w0_attn2_end = w0_back + attn_second;
    let w0_arrive2 = w0_attn2_end + leg;
    let w0_ffn2_end = w1_ffn_end + ffn;

    let rec = |time: f64, kind, wave, instance| TraceRecord { time, kind, wave, instance };
    let trace = vec![
        rec(0.0, AttentionStart, 0, Some(0)),
        rec(w0_attn_end, AttentionEnd, 0, Some(0)),
        rec(w0_attn_end, AttentionStart, 1, Some(0)),
        rec(w0_arrive, A2fArrival, 0, Some(0)),
        rec(w0_arrive, FfnStart, 0, None),
        rec(w1_attn_end, AttentionEnd, 1, Some(0)),
        rec(w1_arrive, A2fArrival, 1, Some(0)),
        rec(w0_ffn_end, FfnEnd, 0, None),
        rec(w0_ffn_end, FfnStart, 1, None),
        rec(w0_back, F2aArrival, 0, Some(0)),
        rec(w0_back, AttentionStart, 0, Some(0)),
        rec(w0_attn2_end, AttentionEnd, 0, Some(0)),
        rec(w0_arrive2, A2fArrival, 0, Some(0)),
        rec(w1_ffn_end, FfnEnd, 1, None),
        rec(w1_ffn_end, FfnStart, 0, None),
        rec(w0_ffn2_end, FfnEnd, 0, None),
    ];
    (trace, w0_attn2_end, w1_attn_end)
}

pub fn hand_requests() -> Vec<Request> {
    vec![Request::new(0, 100, 2), Request::new(1, 100, 1)]
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub struct ProbeResult {
    pub k: usize,
    pub decode_mean: f64,
    pub decode_se: f64,
    pub expected_decode: f64,
    pub prefill_mean: f64,
    pub prefill_se: f64,
    pub expected_prefill: f64,
}

impl ProbeResult {
    pub fn decode_z(&self) -> f64 {
        (self.decode_mean - self.expected_decode).abs() / self.decode_se.max(1e-12)
    }
}

/// Decode and prefill load of wave 0 at attention steps `ks`, from
/// `replications` independent single-instance runs with a full buffer.
pub fn probe_loads(
    batch: u32,
    mu_p: f64,
    p: f64,
    dist: PrefillDist,
    ks: &[usize],
    replications: u64,
) -> Vec<ProbeResult> {
    let steps = ks.iter().max().unwrap() + 1;
    // Enough requests that the buffer never empties before the probed steps.
    let n = (2.0 * batch as f64 * (1.0 + 2.0 * p * steps as f64)) as u64 + 8 * batch as u64;
    let options = RunOptions {
        trace: false,
        check_invariants: false,
        probe_steps: steps,
    };
    let config = BundleConfig::new(1, batch).unwrap();
    let mut decode = vec![Vec::new(); ks.len()];
    let mut prefill = vec![Vec::new(); ks.len()];
    for rep in 0..replications {
        let spec = WorkloadSpec::new(mu_p, p, n)
            .unwrap()
            .with_seed(0x5eed_0000 + rep)
            .with_prefill_dist(dist);
        let out = simcore::run(&config, &BASE, &spec, StopRule::Drain, &options).unwrap();
        let lane = &out.load_probe[0];
        assert!(lane.len() >= steps, "run ended after {} steps", lane.len());
        for (j, &k) in ks.iter().enumerate() {
            decode[j].push(lane[k].decode as f64);
            prefill[j].push(lane[k].prefill as f64);
        }
    }
    ks.iter()
        .enumerate()
        .map(|(j, &k)| {
            let (decode_mean, decode_se) = mean_se(&decode[j]);
            let (prefill_mean, prefill_se) = mean_se(&prefill[j]);
            ProbeResult {
                k,
                decode_mean,
                decode_se,
                expected_decode: expected_decode_load(batch as f64, p, k as f64).unwrap(),
                prefill_mean,
                prefill_se,
                expected_prefill: batch as f64 * mu_p,
            }
        })
        .collect()
}
