//! Hand-computed schedules shared by the oracle and acceptance suites.
//!
//! Server used throughout: iteration = 50 + 10·(B − 1) ms, prefill 80 ms per
//! 1,000 input words, compliance exact, so realized length = requested.

#![allow(dead_code)]

use llmcc::sim::US_PER_MS;
use llmcc::trace::{ArrivalEvent, RequestClass, Trace};
use llmcc::workload_models::{ComplianceModel, ModelBundle, PredictorModel};
use llmcc::{run_simulation, RunOptions, RunResult, ServerConfig};

pub fn server(max_batch: u32) -> ServerConfig {
    ServerConfig {
        t0_ms: 50.0,
        knee_batch: 1,
        slope_ms: 10.0,
        prefill_ms_per_kword: 80.0,
        max_batch,
        e_in_j_per_word: 0.05,
        e_out_j_per_word: 0.5,
        p_idle_w: 100.0,
        tokens_per_word: 1.3,
    }
}

pub fn exact_models() -> ModelBundle {
    ModelBundle {
        predictor: PredictorModel {
            noise_scale: 0.0,
            ..Default::default()
        },
        compliance: ComplianceModel {
            unbounded_log_sigma: 0.0,
            ..ComplianceModel::identity()
        },
        ..Default::default()
    }
}

pub fn ev(id: u64, arrival_ms: u64, input_words: u32, output: u32) -> ArrivalEvent {
    ArrivalEvent {
        request_id: id,
        arrival_ms,
        input_words,
        unbounded_output_words: output,
        class: RequestClass::Summarization,
    }
}

/// (dispatch, first word, completion) in ms, then every TBT sample in ms.
pub type Stamps = (u64, u64, u64, Vec<u64>);

pub struct OracleCase {
    pub name: &'static str,
    pub events: Vec<ArrivalEvent>,
    pub max_batch: u32,
    pub expected: Vec<Stamps>,
}

impl OracleCase {
    pub fn run(&self) -> RunResult {
        let trace = Trace::from_events(self.events.clone(), 1_000).unwrap();
        run_simulation(
            &trace,
            &server(self.max_batch),
            &exact_models(),
            None,
            1,
            &RunOptions::default(),
        )
        .unwrap()
    }

    pub fn observed(&self) -> Vec<Stamps> {
        let r = self.run();
        (0..r.requests.len()).map(|i| stamps(&r, i)).collect()
    }
}

pub fn stamps(r: &RunResult, id: usize) -> Stamps {
    let q = &r.requests[id];
    (
        q.dispatch_us.unwrap() / US_PER_MS,
        q.first_token_us.unwrap() / US_PER_MS,
        q.completion_us.unwrap() / US_PER_MS,
        q.tbt_samples_us
            .iter()
            .map(|&g| u64::from(g) / US_PER_MS)
            .collect(),
    )
}

pub fn oracle_cases() -> Vec<OracleCase> {
    vec![
        // t=0    r0 admitted, prefill until 80
        // t=20   r1 arrives, loop idle → admitted, prefill until 60
        // t=60   r1 joins idle loop: first word; iteration B=1 → 110
        // t=80   r0 prefilled, waits for the boundary
        // t=110  r1 word 2; r0 joins (first word); iteration B=2 → 170
        // t=150  r2 arrives, batch full (max 2), queued
        // t=170  r1 word 3, r0 word 2; iteration B=2 → 230
        // t=230  r1 and r0 complete; r2 admitted, prefill until 250
        // t=250  r2 joins idle loop: first word; iteration B=1 → 300
        // t=300  r2 word 2, complete
        OracleCase {
            name: "overlapping decode with a full batch",
            events: vec![ev(0, 0, 1_000, 3), ev(1, 20, 500, 4), ev(2, 150, 250, 2)],
            max_batch: 2,
            expected: vec![
                (0, 110, 230, vec![60, 60]),
                (20, 60, 230, vec![50, 60, 60]),
                (230, 250, 300, vec![50]),
            ],
        },
        // t=0 r0 admitted; t=80 first word; iterations 80→130→180.
        // t=130 r1 arrives as the iteration ends → waits for the next one.
        // t=180 r0 completes; r1 admitted, prefill 40 ms → 220 first word.
        // t=220→270 one iteration; r1 completes at 270.
        OracleCase {
            name: "arrival tied with an iteration boundary",
            events: vec![ev(0, 0, 1_000, 3), ev(1, 130, 500, 2)],
            max_batch: 1,
            expected: vec![(0, 80, 180, vec![50, 50]), (180, 220, 270, vec![50])],
        },
        // Batch of 4: every iteration takes 50 + 3·10 = 80 ms.
        OracleCase {
            name: "four identical requests",
            events: (0..4).map(|i| ev(i, 0, 1_000, 3)).collect(),
            max_batch: 4,
            expected: vec![(0, 80, 240, vec![80, 80]); 4],
        },
        // r0,r1 join at 80; B=2 iterations of 60 ms: 80→140→200, complete.
        // r2,r3 admitted at 200, prefill → 280; 280→340 complete.
        // r4 admitted at 340 → first (and only) word at 420.
        OracleCase {
            name: "five requests, FIFO hand-off",
            events: vec![
                ev(0, 0, 1_000, 3),
                ev(1, 0, 1_000, 3),
                ev(2, 10, 1_000, 2),
                ev(3, 20, 1_000, 2),
                ev(4, 30, 1_000, 1),
            ],
            max_batch: 2,
            expected: vec![
                (0, 80, 200, vec![60, 60]),
                (0, 80, 200, vec![60, 60]),
                (200, 280, 340, vec![60]),
                (200, 280, 340, vec![60]),
                (340, 420, 420, vec![]),
            ],
        },
    ]
}
