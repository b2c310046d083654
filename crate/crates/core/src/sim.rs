//! Discrete-event model of one LLM serving node.
//!
//! Requests wait in a FIFO queue and are admitted between decode iterations
//! while fewer than `max_batch` requests are in service. An admitted request
//! is prefilled (this does not stall other requests) and joins the decode
//! loop at the next iteration boundary, where its first word is stamped.
//! Every iteration advances each decoding request by one word and lasts
//! [`ServerConfig::decode_iteration_time`] of the decoding batch size, so
//! each TBT sample is exactly the duration of the iteration that produced it.
//!
//! Time is kept in integer microseconds and energy in integer picojoules so
//! runs are bit-for-bit reproducible.
//!
//! Simultaneous events resolve as: controller tick (closing the previous
//! second), iteration completion, prefill completion, admission, arrival;
//! ties within a kind go by request id.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::controller::{
    rewrite_request, CongestionController, ControlSample, ControllerConfig, RewriteDecision,
    Transition,
};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::trace::{ArrivalEvent, Trace};
use crate::workload_models::{realized_length, ModelBundle};

pub const US_PER_MS: u64 = 1_000;
pub const US_PER_S: u64 = 1_000_000;
const PJ_PER_J: f64 = 1e12;

/// Service-time and energy constants of the simulated node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    /// Decode iteration time at or below the knee.
    pub t0_ms: f64,
    pub knee_batch: u32,
    /// Added iteration time per decoding request beyond the knee.
    pub slope_ms: f64,
    pub prefill_ms_per_kword: f64,
    pub max_batch: u32,
    pub e_in_j_per_word: f64,
    pub e_out_j_per_word: f64,
    pub p_idle_w: f64,
    /// Only used when reporting token counts.
    pub tokens_per_word: f64,
}

/// Calibrated so the default workload (≈500-word outputs, ≈9,500-word
/// inputs) saturates at roughly 2.3 requests per second: at a full batch of
/// 32 an iteration takes ≈26.9 ms, so a request spends ≈14 s in service.
impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            t0_ms: 10.0,
            knee_batch: 1,
            slope_ms: 0.545,
            prefill_ms_per_kword: 80.0,
            max_batch: 32,
            e_in_j_per_word: 0.05,
            e_out_j_per_word: 0.5,
            p_idle_w: 300.0,
            tokens_per_word: 1.3,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("t0_ms", self.t0_ms),
            ("slope_ms", self.slope_ms),
            ("prefill_ms_per_kword", self.prefill_ms_per_kword),
            ("e_in_j_per_word", self.e_in_j_per_word),
            ("e_out_j_per_word", self.e_out_j_per_word),
            ("p_idle_w", self.p_idle_w),
            ("tokens_per_word", self.tokens_per_word),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!(
                    "server.{name} must be a non-negative number, got {v}"
                )));
            }
        }
        if self.max_batch < 1 {
            return Err(Error::Validation(
                "server.max_batch must be at least 1".into(),
            ));
        }
        if self.knee_batch > self.max_batch {
            return Err(Error::Validation(format!(
                "server.knee_batch ({}) exceeds max_batch ({})",
                self.knee_batch, self.max_batch
            )));
        }
        Ok(())
    }

    /// Milliseconds per decode step with `active_batch` decoding requests.
    pub fn decode_iteration_time(&self, active_batch: u32) -> Result<f64> {
        if active_batch < 1 || active_batch > self.max_batch {
            return Err(Error::Domain(format!(
                "batch size {active_batch} outside 1..={}",
                self.max_batch
            )));
        }
        let excess = active_batch.saturating_sub(self.knee_batch);
        Ok(self.t0_ms + self.slope_ms * f64::from(excess))
    }

    pub fn prefill_time(&self, input_words: u32) -> Result<f64> {
        if input_words == 0 {
            return Err(Error::Domain(
                "prefill needs at least one input word".into(),
            ));
        }
        Ok(self.prefill_ms_per_kword * f64::from(input_words) / 1000.0)
    }

    fn iteration_us(&self, active_batch: u32) -> u64 {
        let ms = self
            .decode_iteration_time(active_batch)
            .expect("batch size kept within range by the scheduler");
        ((ms * US_PER_MS as f64).round() as u64).max(1)
    }

    fn prefill_us(&self, input_words: u32) -> u64 {
        // ms/kword × words = µs.
        (self.prefill_ms_per_kword * f64::from(input_words)).round() as u64
    }

    pub(crate) fn e_in_pj(&self) -> u128 {
        (self.e_in_j_per_word * PJ_PER_J).round() as u128
    }

    pub(crate) fn e_out_pj(&self) -> u128 {
        (self.e_out_j_per_word * PJ_PER_J).round() as u128
    }

    /// Idle power in microwatts, so that µW × µs = pJ.
    pub(crate) fn p_idle_uw(&self) -> u128 {
        (self.p_idle_w * 1e6).round() as u128
    }
}

pub fn pj_to_j(pj: u128) -> f64 {
    pj as f64 / PJ_PER_J
}

/// Lifecycle of one request. Timestamps are microseconds since trace start.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestState {
    pub event: ArrivalEvent,
    /// `None` when the run has no controller.
    pub rewrite: Option<RewriteDecision>,
    /// Left the queue and took a batch slot.
    pub admitted_us: Option<u64>,
    /// Prefill started; later than admission only when a length prediction
    /// was still running.
    pub dispatch_us: Option<u64>,
    pub first_token_us: Option<u64>,
    pub completion_us: Option<u64>,
    pub realized_output_words: u32,
    pub words_emitted: u32,
    /// Gap before each word after the first, in microseconds.
    pub tbt_samples_us: Vec<u32>,
}

impl RequestState {
    fn new(event: ArrivalEvent) -> Self {
        RequestState {
            event,
            rewrite: None,
            admitted_us: None,
            dispatch_us: None,
            first_token_us: None,
            completion_us: None,
            realized_output_words: 0,
            words_emitted: 0,
            tbt_samples_us: Vec::new(),
        }
    }

    pub fn arrival_us(&self) -> u64 {
        self.event.arrival_ms * US_PER_MS
    }

    pub fn queueing_ms(&self) -> Option<f64> {
        self.dispatch_us.map(|d| us_to_ms(d - self.arrival_us()))
    }

    pub fn ttft_ms(&self) -> Option<f64> {
        self.first_token_us.map(|t| us_to_ms(t - self.arrival_us()))
    }

    pub fn e2e_ms(&self) -> Option<f64> {
        self.completion_us.map(|t| us_to_ms(t - self.arrival_us()))
    }

    pub fn r_applied(&self) -> f64 {
        self.rewrite.as_ref().map_or(0.0, |d| d.r_applied)
    }

    pub fn is_complete(&self) -> bool {
        self.completion_us.is_some()
    }

    /// Emission time of every word produced so far.
    pub fn word_times_us(&self) -> impl Iterator<Item = u64> + '_ {
        let first = self.first_token_us;
        first.into_iter().flat_map(move |start| {
            std::iter::once(start).chain(self.tbt_samples_us.iter().scan(start, |t, gap| {
                *t += u64::from(*gap);
                Some(*t)
            }))
        })
    }
}

pub fn us_to_ms(us: u64) -> f64 {
    us as f64 / US_PER_MS as f64
}

/// Live counters captured at the end of every simulated second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occupancy {
    pub second: u64,
    pub arrived: u64,
    pub completed: u64,
    pub queued: u64,
    pub in_flight: u64,
}

/// Everything a run produced. Immutable once returned.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Every request that arrived before the run ended, in id order.
    pub requests: Vec<RequestState>,
    /// Half-open intervals with no request in service.
    pub idle_intervals_us: Vec<(u64, u64)>,
    pub horizon_s: u64,
    pub occupancy: Vec<Occupancy>,
    pub controller_log: Vec<ControlSample>,
    pub transitions: Vec<Transition>,
    pub controller_name: Option<&'static str>,
    pub truncated: bool,
    pub seed: u64,
    pub trace_fingerprint: u64,
    pub server: ServerConfig,
    pub total_energy_pj: u128,
}

impl RunResult {
    pub fn total_energy_j(&self) -> f64 {
        pj_to_j(self.total_energy_pj)
    }

    pub fn completed(&self) -> impl Iterator<Item = &RequestState> {
        self.requests.iter().filter(|r| r.is_complete())
    }

    pub fn activation_second(&self) -> Option<u64> {
        self.transitions.iter().find(|t| t.active).map(|t| t.second)
    }

    pub fn deactivation_second(&self) -> Option<u64> {
        self.transitions
            .iter()
            .find(|t| !t.active)
            .map(|t| t.second)
    }
}

/// Closed-form energy of a finished run: input words of every dispatched
/// request, every emitted output word, and idle power over empty-batch time.
pub fn accumulate_energy(
    requests: &[RequestState],
    idle_intervals_us: &[(u64, u64)],
    server: &ServerConfig,
) -> u128 {
    let words: u128 = requests
        .iter()
        .map(|r| {
            let input = if r.dispatch_us.is_some() {
                u128::from(r.event.input_words) * server.e_in_pj()
            } else {
                0
            };
            input + u128::from(r.words_emitted) * server.e_out_pj()
        })
        .sum();
    let idle_us: u128 = idle_intervals_us
        .iter()
        .map(|(a, b)| u128::from(b - a))
        .sum();
    words + idle_us * server.p_idle_uw()
}

/// Controller plus the rewrite policy applied at admission.
pub struct ControlPlane<'a> {
    pub controller: &'a mut dyn CongestionController,
    pub policy: &'a ControllerConfig,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop processing events after this many seconds (queue may be
    /// non-empty; the result is then flagged `truncated`).
    pub cutoff_s: Option<f64>,
}

struct Engine<'a, 'c> {
    server: &'a ServerConfig,
    models: &'a ModelBundle,
    control: Option<ControlPlane<'c>>,
    seed: u64,
    reqs: Vec<RequestState>,
    queue: VecDeque<usize>,
    ready: Vec<usize>,
    decoding: Vec<usize>,
    prefilling: usize,
    iteration: Option<(u64, u64)>, // (start, end)
    /// Prefill completions as (time, request id).
    prefills: BinaryHeap<Reverse<(u64, u64)>>,
    completed: u64,
    idle_since: Option<u64>,
    idle: Vec<(u64, u64)>,
    energy_pj: u128,
    // Per-second TBT accumulators for the control signal.
    tbt_sum_us: Vec<u64>,
    tbt_count: Vec<u64>,
    next_tick_second: u64,
    occupancy: Vec<Occupancy>,
    controller_log: Vec<ControlSample>,
    e_in_pj: u128,
    e_out_pj: u128,
}

impl<'a, 'c> Engine<'a, 'c> {
    fn in_service(&self) -> usize {
        self.prefilling + self.ready.len() + self.decoding.len()
    }

    fn mark_busy(&mut self, now: u64) {
        if let Some(start) = self.idle_since.take() {
            if now > start {
                self.idle.push((start, now));
            }
        }
    }

    fn mark_maybe_idle(&mut self, now: u64) {
        if self.in_service() == 0 && self.idle_since.is_none() {
            self.idle_since = Some(now);
        }
    }

    fn record_word(&mut self, at_us: u64, gap_us: Option<u64>) {
        self.energy_pj += self.e_out_pj;
        if let Some(gap) = gap_us {
            let s = (at_us / US_PER_S) as usize;
            if self.tbt_sum_us.len() <= s {
                self.tbt_sum_us.resize(s + 1, 0);
                self.tbt_count.resize(s + 1, 0);
            }
            self.tbt_sum_us[s] += gap;
            self.tbt_count[s] += 1;
        }
    }

    /// Close every second that ends at or before `t`.
    fn tick_until(&mut self, t: u64, arrived: u64) -> Result<()> {
        while (self.next_tick_second + 1) * US_PER_S <= t {
            let s = self.next_tick_second;
            let idx = s as usize;
            if let Some(control) = self.control.as_mut() {
                let count = self.tbt_count.get(idx).copied().unwrap_or(0);
                if count > 0 {
                    let avg_ms = self.tbt_sum_us[idx] as f64 / count as f64 / US_PER_MS as f64;
                    let sample = control.controller.ingest_sample(s, avg_ms)?;
                    self.controller_log.push(sample);
                }
            }
            self.occupancy.push(Occupancy {
                second: s,
                arrived,
                completed: self.completed,
                queued: self.queue.len() as u64,
                in_flight: self.in_service() as u64,
            });
            self.next_tick_second += 1;
        }
        Ok(())
    }

    fn finish_iteration(&mut self, now: u64) {
        let (start, end) = self.iteration.take().expect("iteration in flight");
        debug_assert_eq!(end, now);
        let gap = end - start;
        let members = std::mem::take(&mut self.decoding);
        for idx in members {
            self.reqs[idx].words_emitted += 1;
            self.reqs[idx].tbt_samples_us.push(gap as u32);
            self.record_word(now, Some(gap));
            if self.reqs[idx].words_emitted >= self.reqs[idx].realized_output_words {
                self.reqs[idx].completion_us = Some(now);
                self.completed += 1;
            } else {
                self.decoding.push(idx);
            }
        }
    }

    fn admit(&mut self, idx: usize, now: u64) {
        let event = self.reqs[idx].event;
        let (decision, target) = match self.control.as_ref() {
            Some(control) => {
                let mut rng = substream(self.seed, Stream::Predictor, event.request_id);
                let d = rewrite_request(
                    &event,
                    control.controller.current_r(),
                    &self.models.predictor,
                    control.policy,
                    &mut rng,
                );
                let target = d.target_n;
                (Some(d), target)
            }
            None => (None, None),
        };
        let predicted = decision.as_ref().is_some_and(|d| d.predicted_len.is_some());
        let mut rng = substream(self.seed, Stream::Realized, event.request_id);
        let realized = realized_length(
            target,
            event.unbounded_output_words,
            &self.models.compliance,
            &mut rng,
        );

        // A running length prediction delays the prefill, never past the
        // time the request has already spent queued.
        let dispatch = if predicted {
            let latency_us = (self.models.predictor.latency_ms * US_PER_MS as f64).round() as u64;
            now.max(self.reqs[idx].arrival_us() + latency_us)
        } else {
            now
        };
        let done = dispatch + self.server.prefill_us(event.input_words);

        let r = &mut self.reqs[idx];
        r.rewrite = decision;
        r.realized_output_words = realized;
        r.admitted_us = Some(now);
        r.dispatch_us = Some(dispatch);
        self.energy_pj += u128::from(event.input_words) * self.e_in_pj;
        self.prefilling += 1;
        self.prefills.push(Reverse((done, event.request_id)));
    }

    /// Work done between iterations: move prefilled requests into the loop,
    /// admit from the queue, and start the next iteration.
    fn boundary(&mut self, now: u64) {
        if self.iteration.is_some() {
            return;
        }
        let joining = std::mem::take(&mut self.ready);
        for idx in joining {
            self.reqs[idx].first_token_us = Some(now);
            self.reqs[idx].words_emitted = 1;
            self.record_word(now, None);
            if self.reqs[idx].realized_output_words <= 1 {
                self.reqs[idx].completion_us = Some(now);
                self.completed += 1;
            } else {
                self.decoding.push(idx);
            }
        }
        while self.in_service() < self.server.max_batch as usize {
            let Some(idx) = self.queue.pop_front() else {
                break;
            };
            self.mark_busy(now);
            self.admit(idx, now);
        }
        if !self.decoding.is_empty() {
            let dur = self.server.iteration_us(self.decoding.len() as u32);
            self.iteration = Some((now, now + dur));
        }
        self.mark_maybe_idle(now);
    }
}

/// Run one simulation.
///
/// Without a control plane every request generates its unbounded length.
/// With one, each admitted request is rewritten using the controller's
/// current `r`, and the controller receives one average-TBT sample per
/// simulated second that produced tokens.
pub fn run_simulation(
    trace: &Trace,
    server: &ServerConfig,
    models: &ModelBundle,
    control: Option<ControlPlane<'_>>,
    seed: u64,
    options: &RunOptions,
) -> Result<RunResult> {
    server.validate()?;
    models.validate()?;
    trace.validate()?;
    if let Some(c) = control.as_ref() {
        c.policy.validate()?;
    }
    let cutoff_us = options
        .cutoff_s
        .map(|s| (s * US_PER_S as f64).round() as u64);
    let controller_name = control.as_ref().map(|c| c.controller.name());

    let mut eng = Engine {
        server,
        models,
        control,
        seed,
        reqs: Vec::with_capacity(trace.events.len()),
        queue: VecDeque::new(),
        ready: Vec::new(),
        decoding: Vec::new(),
        prefilling: 0,
        iteration: None,
        prefills: BinaryHeap::new(),
        completed: 0,
        idle_since: Some(0),
        idle: Vec::new(),
        energy_pj: 0,
        tbt_sum_us: Vec::new(),
        tbt_count: Vec::new(),
        next_tick_second: 0,
        occupancy: Vec::new(),
        controller_log: Vec::new(),
        e_in_pj: server.e_in_pj(),
        e_out_pj: server.e_out_pj(),
    };
    let mut index_of = std::collections::HashMap::with_capacity(trace.events.len());
    let mut next_arrival = 0usize;
    let mut last_event_us = 0u64;
    let mut truncated = false;

    loop {
        let arrival_t = trace
            .events
            .get(next_arrival)
            .map(|e| e.arrival_ms * US_PER_MS);
        let prefill_t = eng.prefills.peek().map(|Reverse((t, _))| *t);
        let iter_t = eng.iteration.map(|(_, end)| end);
        let Some(now) = [arrival_t, prefill_t, iter_t].into_iter().flatten().min() else {
            break;
        };
        if cutoff_us.is_some_and(|c| now >= c) {
            truncated = true;
            break;
        }
        eng.tick_until(now, eng.reqs.len() as u64)?;
        last_event_us = now;

        if iter_t == Some(now) {
            eng.finish_iteration(now);
        }
        while let Some(Reverse((t, id))) = eng.prefills.peek().copied() {
            if t != now {
                break;
            }
            eng.prefills.pop();
            let idx = index_of[&id];
            eng.prefilling -= 1;
            eng.ready.push(idx);
        }
        // Admission at this boundary happens before same-instant arrivals
        // are enqueued; those wait for the next boundary unless the loop is
        // idle, in which case the second call admits them immediately.
        eng.boundary(now);
        while let Some(e) = trace.events.get(next_arrival) {
            if e.arrival_ms * US_PER_MS != now {
                break;
            }
            index_of.insert(e.request_id, eng.reqs.len());
            eng.queue.push_back(eng.reqs.len());
            eng.reqs.push(RequestState::new(*e));
            next_arrival += 1;
        }
        eng.boundary(now);
    }

    let trace_end_us = trace.duration_ms * US_PER_MS;
    let end_us = match cutoff_us {
        Some(c) if truncated => c,
        _ => trace_end_us.max(if eng.reqs.is_empty() {
            0
        } else {
            last_event_us + 1
        }),
    };
    let horizon_s = end_us.div_ceil(US_PER_S);
    eng.tick_until(horizon_s * US_PER_S, eng.reqs.len() as u64)?;
    if let Some(start) = eng.idle_since.take() {
        let stop = horizon_s * US_PER_S;
        if stop > start {
            eng.idle.push((start, stop));
        }
    }
    truncated |= eng.reqs.len() as u64 != eng.completed || next_arrival < trace.events.len();

    let idle_us: u128 = eng.idle.iter().map(|(a, b)| u128::from(b - a)).sum();
    let total_energy_pj = eng.energy_pj + idle_us * server.p_idle_uw();
    let transitions = eng
        .control
        .as_ref()
        .map(|c| c.controller.transitions().to_vec())
        .unwrap_or_default();

    Ok(RunResult {
        requests: eng.reqs,
        idle_intervals_us: eng.idle,
        horizon_s,
        occupancy: eng.occupancy,
        controller_log: eng.controller_log,
        transitions,
        controller_name,
        truncated,
        seed,
        trace_fingerprint: trace.fingerprint(),
        server: server.clone(),
        total_energy_pj,
    })
}
