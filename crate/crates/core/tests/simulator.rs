mod common;

use afd_core::metrics;
use afd_core::model::{BundleConfig, PrefillDist, WorkloadSpec};
use afd_core::simcore::verify::{check_barrier, check_fcfs, check_mutual_exclusion, check_token_conservation};
use afd_core::simcore::{self, run_with_requests, RunOptions, StopRule};
use common::*;
use proptest::prelude::*;

#[test]
fn hand_traced_schedule() {
    let config = BundleConfig::new(1, 1).unwrap();
    let out = run_with_requests(&config, &BASE, hand_requests(), StopRule::Drain, &traced()).unwrap();
    let (expected, done0, done1) = hand_schedule();
    assert_eq!(out.trace.as_deref().unwrap(), expected.as_slice());
    assert_eq!(out.requests[0].completion_time, Some(done0));
    assert_eq!(out.requests[1].completion_time, Some(done1));
    assert_eq!(out.requests[0].start_decode_time, Some(0.0));
    assert_eq!(out.tokens_emitted, 3);
    assert!((done0 - 220.43665).abs() < 1e-9);
}

#[test]
fn identical_seeds_identical_runs() {
    let spec = WorkloadSpec::from_mean_decode(30.0, 20.0, 200).unwrap().with_seed(42);
    let config = BundleConfig::new(3, 16).unwrap();
    let a = simcore::run(&config, &BASE, &spec, StopRule::Drain, &traced()).unwrap();
    let b = simcore::run(&config, &BASE, &spec, StopRule::Drain, &traced()).unwrap();
    assert_eq!(a.completions, b.completions);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.requests, b.requests);
    let c = simcore::run(&config, &BASE, &spec.clone().with_seed(43), StopRule::Drain, &traced()).unwrap();
    assert_ne!(a.completions, c.completions);
}

#[test]
fn decode_load_follows_expectation() {
    let results = probe_loads(32, 50.0, 0.02, PrefillDist::UniformBounded, &[1, 10, 50], 1000);
    for r in &results {
        assert!(r.decode_z() < 4.0, "k={} mean {} expected {} se {}", r.k, r.decode_mean, r.expected_decode, r.decode_se);
        let z = (r.prefill_mean - r.expected_prefill).abs() / r.prefill_se;
        assert!(z < 4.0, "prefill k={} mean {} expected {}", r.k, r.prefill_mean, r.expected_prefill);
    }
}

#[test]
fn constant_prefill_is_exact_while_buffer_is_full() {
    for r in probe_loads(16, 40.0, 0.05, PrefillDist::Constant, &[0, 5, 20], 50) {
        assert_eq!(r.prefill_mean, 16.0 * 40.0);
        assert_eq!(r.prefill_se, 0.0);
    }
}

#[test]
fn stop_after_completions_keeps_same_prefix() {
    let spec = WorkloadSpec::from_mean_decode(10.0, 8.0, 100).unwrap().with_seed(9);
    let config = BundleConfig::new(2, 8).unwrap();
    let full = simcore::run(&config, &BASE, &spec, StopRule::Drain, &RunOptions::default()).unwrap();
    let part = simcore::run(&config, &BASE, &spec, StopRule::TotalCompletions(60), &RunOptions::default()).unwrap();
    assert!(part.completions.len() >= 60);
    assert_eq!(part.completions[..], full.completions[..part.completions.len()]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn run_invariants(
        r in 1u32..5,
        batch in 1u32..7,
        mu_p in 1u32..60,
        mu_d in 1u32..25,
        extra in 0u64..40,
        seed in any::<u64>(),
        uniform in any::<bool>(),
    ) {
        let n = 2 * batch as u64 + extra;
        let dist = if uniform { PrefillDist::UniformBounded } else { PrefillDist::Constant };
        let spec = WorkloadSpec::from_mean_decode(mu_p as f64, mu_d as f64, n)
            .unwrap()
            .with_seed(seed)
            .with_prefill_dist(dist);
        let config = BundleConfig::new(r, batch).unwrap();
        let out = simcore::run(&config, &BASE, &spec, StopRule::Drain, &traced()).unwrap();
        let trace = out.trace.as_deref().unwrap();

        prop_assert_eq!(out.completions.len() as u64, r as u64 * n);
        prop_assert!(check_barrier(trace, r).is_ok(), "{:?}", check_barrier(trace, r));
        prop_assert!(check_mutual_exclusion(trace, r).is_ok(), "{:?}", check_mutual_exclusion(trace, r));
        prop_assert!(check_token_conservation(&out).is_ok(), "{:?}", check_token_conservation(&out));
        prop_assert!(check_fcfs(&out).is_ok(), "{:?}", check_fcfs(&out));

        let m = metrics::evaluate(&out, r, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.eta_a) && (0.0..=1.0).contains(&m.eta_f));
        let t = out.final_clock;
        for log in out.attention_busy.iter().chain(std::iter::once(&out.ffn_busy)) {
            prop_assert!(log.busy_until(t) + log.idle_until(t) <= t + 1e-6);
        }
        for w in out.completions.windows(2) {
            prop_assert!(w[0].completion_time <= w[1].completion_time);
        }
    }
}

#[test]
fn long_horizon_r8_tracks_theory() {
    use afd_core::analytic::{horizon_average_load, predicted_throughput, HorizonMode};
    let spec = WorkloadSpec::from_mean_decode(100.0, 500.0, 10_000).unwrap().with_seed(0);
    let config = BundleConfig::new(8, 256).unwrap();
    let out = simcore::run(&config, &BASE, &spec, StopRule::Drain, &RunOptions::default()).unwrap();
    let m = metrics::evaluate(&out, 8, 10_000).unwrap();
    let t_bar = horizon_average_load(256.0, 100.0, spec.p(), 10_000, HorizonMode::FiniteN).unwrap();
    let theory = predicted_throughput(&BASE, 256.0, t_bar, 8.0).unwrap();
    let gap = 1.0 - m.throughput_80 / theory;
    assert!(gap.abs() <= 0.10, "sim {} theory {theory} gap {:.2}%", m.throughput_80, 100.0 * gap);
}
