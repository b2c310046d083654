//! Invariants over randomly generated small traces and servers.

mod common;

use llmcc::metrics::{compare_runs, RunRecord, Window};
use llmcc::sim::{accumulate_energy, US_PER_S};
use llmcc::trace::{ArrivalEvent, Phase, PhaseSchedule, RequestClass, Trace};
use llmcc::workload_models::ComplianceModel;
use llmcc::{
    aggregate_per_second, generate_trace, run_simulation, ConstantController, ControlPlane,
    ControllerConfig, ModelBundle, RunOptions, RunResult, ServerConfig, WorkloadProfile,
};
use proptest::prelude::*;

fn arb_server() -> impl Strategy<Value = ServerConfig> {
    (1u32..8, 5.0f64..60.0, 1u32..4, 0.0f64..10.0, 1.0f64..200.0).prop_map(
        |(max_batch, t0_ms, knee_batch, slope_ms, prefill)| ServerConfig {
            t0_ms,
            knee_batch: knee_batch.min(max_batch),
            slope_ms,
            prefill_ms_per_kword: prefill,
            max_batch,
            ..ServerConfig::default()
        },
    )
}

fn arb_trace() -> impl Strategy<Value = Trace> {
    proptest::collection::vec((0u64..15_000, 1u32..4_000, 1u32..120, 0usize..3), 0..40).prop_map(
        |mut raw| {
            raw.sort_by_key(|r| r.0);
            let classes = RequestClass::ALL;
            let events = raw
                .into_iter()
                .enumerate()
                .map(|(i, (t, input, output, c))| ArrivalEvent {
                    request_id: i as u64,
                    arrival_ms: t,
                    input_words: input,
                    unbounded_output_words: output,
                    class: classes[c],
                })
                .collect();
            Trace::from_events(events, 15_000).unwrap()
        },
    )
}

fn run(trace: &Trace, server: &ServerConfig, models: &ModelBundle, r: Option<f64>) -> RunResult {
    let policy = ControllerConfig::default();
    let mut c = r.map(|r| ConstantController::new(r).unwrap());
    let control = c.as_mut().map(|c| ControlPlane {
        controller: c,
        policy: &policy,
    });
    run_simulation(trace, server, models, control, 3, &RunOptions::default()).unwrap()
}

fn noiseless() -> ModelBundle {
    let mut m = common::exact_models();
    m.compliance = ComplianceModel {
        unbounded_log_sigma: 0.0,
        rel_noise: 0.0,
        ..ComplianceModel::identity()
    };
    m
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn live_counts_are_conserved_and_match_offline_buckets(
        trace in arb_trace(), server in arb_server()
    ) {
        let r = run(&trace, &server, &ModelBundle::default(), None);
        let rows = aggregate_per_second(&r);
        prop_assert_eq!(r.occupancy.len(), rows.len());
        let mut done = 0;
        for (live, row) in r.occupancy.iter().zip(&rows) {
            prop_assert_eq!(live.second, row.second);
            prop_assert_eq!(live.arrived, live.completed + live.queued + live.in_flight);
            prop_assert_eq!(live.queued, row.queue_depth);
            prop_assert_eq!(live.in_flight, row.in_flight);
            done += row.completions;
            prop_assert_eq!(live.completed, done);
        }
        prop_assert!(!r.truncated);
        prop_assert_eq!(r.completed().count(), trace.events.len());
    }

    #[test]
    fn stamps_are_ordered_and_add_up(trace in arb_trace(), server in arb_server()) {
        let r = run(&trace, &server, &ModelBundle::default(), None);
        for q in &r.requests {
            let admitted = q.admitted_us.unwrap();
            let dispatch = q.dispatch_us.unwrap();
            let first = q.first_token_us.unwrap();
            let done = q.completion_us.unwrap();
            prop_assert!(q.arrival_us() <= admitted);
            prop_assert!(admitted <= dispatch && dispatch <= first && first <= done);
            prop_assert_eq!(q.words_emitted, q.realized_output_words);
            prop_assert_eq!(q.tbt_samples_us.len() as u32 + 1, q.words_emitted);
            let gaps: u64 = q.tbt_samples_us.iter().map(|&g| u64::from(g)).sum();
            prop_assert_eq!(first + gaps, done);
            prop_assert!(q.e2e_ms().unwrap() >= q.ttft_ms().unwrap());
        }
    }

    #[test]
    fn energy_buckets_partition_the_total(trace in arb_trace(), server in arb_server()) {
        let r = run(&trace, &server, &ModelBundle::default(), Some(0.1));
        let buckets: u128 = aggregate_per_second(&r).iter().map(|s| s.energy_pj).sum();
        prop_assert_eq!(buckets, r.total_energy_pj);
        prop_assert_eq!(
            accumulate_energy(&r.requests, &r.idle_intervals_us, &r.server),
            r.total_energy_pj
        );
        let idle: u64 = r.idle_intervals_us.iter().map(|(a, b)| b - a).sum();
        prop_assert!(idle <= r.horizon_s * US_PER_S);
    }

    #[test]
    fn runs_are_deterministic(trace in arb_trace(), server in arb_server()) {
        let models = ModelBundle::default();
        prop_assert_eq!(run(&trace, &server, &models, Some(0.15)), run(&trace, &server, &models, Some(0.15)));
    }

    #[test]
    fn null_controller_changes_nothing(trace in arb_trace(), server in arb_server()) {
        let models = ModelBundle::default();
        let plain = run(&trace, &server, &models, None);
        let mut null = run(&trace, &server, &models, Some(0.0));
        for q in &mut null.requests {
            let d = q.rewrite.take().unwrap();
            prop_assert!(!d.is_rewritten() && d.predicted_len.is_none());
        }
        prop_assert_eq!(&plain.requests, &null.requests);
        prop_assert_eq!(&plain.occupancy, &null.occupancy);
        prop_assert_eq!(&plain.idle_intervals_us, &null.idle_intervals_us);
        prop_assert_eq!(plain.total_energy_pj, null.total_energy_pj);
        prop_assert!(null.transitions.is_empty());
    }

    #[test]
    fn bounding_never_lengthens_noise_free_outputs(
        trace in arb_trace(), server in arb_server(), r in 0.05f64..0.5
    ) {
        let models = noiseless();
        let plain = run(&trace, &server, &models, None);
        let bounded = run(&trace, &server, &models, Some(r));
        for (u, b) in plain.requests.iter().zip(&bounded.requests) {
            prop_assert_eq!(u.realized_output_words, u.event.unbounded_output_words);
            prop_assert!(b.realized_output_words <= u.realized_output_words);
        }
    }

    #[test]
    fn comparisons_are_antisymmetric(trace in arb_trace(), server in arb_server()) {
        let models = ModelBundle::default();
        let u = RunRecord::from_run(&run(&trace, &server, &models, None));
        let b = RunRecord::from_run(&run(&trace, &server, &models, Some(0.2)));
        let end = u.per_second.len().min(b.per_second.len()) as u64;
        let w = Window::new(0, end).unwrap();
        let ab = compare_runs(&u, &b, w, &models.quality).unwrap();
        let ba = compare_runs(&b, &u, w, &models.quality).unwrap();
        prop_assert_eq!(ab.completions_unbounded, ba.completions_bounded);
        prop_assert_eq!(ab.completions_bounded, ba.completions_unbounded);
        prop_assert_eq!(ab.energy_unbounded_j, ba.energy_bounded_j);
        if let (Some(x), Some(y)) = (ab.e2e_peak_ratio, ba.e2e_peak_ratio) {
            prop_assert!((x * y - 1.0).abs() < 1e-9);
        }

        let same = compare_runs(&u, &u, w, &models.quality).unwrap();
        prop_assert_eq!(same.completions_delta_pct.unwrap_or(0.0), 0.0);
        prop_assert_eq!(same.energy_delta_pct.unwrap_or(0.0), 0.0);
        prop_assert_eq!(same.rewritten_requests, 0);
        if let Some(ratio) = same.e2e_peak_ratio {
            prop_assert_eq!(ratio, 1.0);
        }
    }

    #[test]
    fn generated_traces_are_well_formed(
        seed in 0u64..1_000,
        phases in proptest::collection::vec((1u32..40, 0.0f64..4.0, any::<bool>()), 1..5)
    ) {
        let schedule = PhaseSchedule::new(
            phases
                .into_iter()
                .map(|(d, rps, ramp)| (f64::from(d), rps, ramp))
                .map(|(d, rps, ramp)| if ramp { Phase::ramp(d, rps) } else { Phase::constant(d, rps) })
                .collect(),
        )
        .unwrap();
        let profile = WorkloadProfile::default();
        let t = generate_trace(&schedule, &profile, seed).unwrap();
        prop_assert_eq!(t.duration_ms, schedule.duration_ms());
        for (i, e) in t.events.iter().enumerate() {
            prop_assert_eq!(e.request_id, i as u64);
            prop_assert!(e.arrival_ms < t.duration_ms);
            prop_assert!((profile.input_min_words..=profile.input_max_words).contains(&e.input_words));
            prop_assert!((profile.output_min_words..=profile.output_max_words).contains(&e.unbounded_output_words));
        }
        prop_assert!(t.events.windows(2).all(|w| w[0].arrival_ms <= w[1].arrival_ms));
        let back = Trace::from_csv_str(&t.to_csv_string(), std::path::Path::new("mem.csv")).unwrap();
        prop_assert_eq!(&back.events, &t.events);
        prop_assert_eq!(back.fingerprint(), t.fingerprint());
        prop_assert_eq!(generate_trace(&schedule, &profile, seed).unwrap(), t);
    }
}
