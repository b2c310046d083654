//! Open-loop request-arrival traces.
//!
//! A [`PhaseSchedule`] describes offered load over time as a list of
//! constant-rate holds and linear ramps. [`generate_trace`] turns it into a
//! Poisson arrival process (ramps are sampled by thinning) and attaches
//! per-request attributes drawn from a [`WorkloadProfile`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

pub const TRACE_HEADER: &str = "id,arrival_ms,input_words,unbounded_output_words,class";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestClass {
    Summarization,
    Coding,
    ShortForm,
}

impl RequestClass {
    pub const ALL: [RequestClass; 3] = [
        RequestClass::Summarization,
        RequestClass::Coding,
        RequestClass::ShortForm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestClass::Summarization => "summarization",
            RequestClass::Coding => "coding",
            RequestClass::ShortForm => "short-form",
        }
    }
}

impl fmt::Display for RequestClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequestClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RequestClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown request class `{s}`"))
    }
}

/// One request arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrivalEvent {
    pub request_id: u64,
    pub arrival_ms: u64,
    pub input_words: u32,
    /// Length the model would produce with no bound (the `L` the controller
    /// tries to predict).
    pub unbounded_output_words: u32,
    pub class: RequestClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseShape {
    Constant,
    /// Rate moves linearly from the previous phase's rate (0 for the first
    /// phase) to this phase's target.
    LinearRamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub duration_s: f64,
    pub target_rps: f64,
    pub shape: PhaseShape,
}

impl Phase {
    pub fn constant(duration_s: f64, rps: f64) -> Self {
        Phase {
            duration_s,
            target_rps: rps,
            shape: PhaseShape::Constant,
        }
    }

    pub fn ramp(duration_s: f64, to_rps: f64) -> Self {
        Phase {
            duration_s,
            target_rps: to_rps,
            shape: PhaseShape::LinearRamp,
        }
    }
}

/// Ordered offered-load phases.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    pub phases: Vec<Phase>,
}

impl PhaseSchedule {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        let schedule = PhaseSchedule { phases };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Two-peak, 22-minute recipe: a long 2.5 RPS peak followed much later by
    /// a shorter 1.5 RPS peak, with a quiet valley in between. The valley rate
    /// and ramp slopes are not published and are tunable guesses.
    pub fn paper() -> Self {
        PhaseSchedule {
            phases: vec![
                Phase::ramp(60.0, 2.5),
                Phase::constant(90.0, 2.5),
                Phase::ramp(60.0, 0.2),
                Phase::constant(630.0, 0.2),
                Phase::ramp(60.0, 1.5),
                Phase::constant(60.0, 1.5),
                Phase::ramp(60.0, 0.2),
                Phase::constant(300.0, 0.2),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.duration_s.is_finite() && p.duration_s > 0.0) {
                return Err(Error::Validation(format!(
                    "phase {i}: duration must be positive, got {}",
                    p.duration_s
                )));
            }
            if !(p.target_rps.is_finite() && p.target_rps >= 0.0) {
                return Err(Error::Validation(format!(
                    "phase {i}: rate must be non-negative, got {}",
                    p.target_rps
                )));
            }
            let ms = p.duration_s * 1000.0;
            if (ms - ms.round()).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "phase {i}: duration {} s is not a whole number of milliseconds",
                    p.duration_s
                )));
            }
        }
        Ok(())
    }

    pub fn duration_ms(&self) -> u64 {
        self.phases
            .iter()
            .map(|p| (p.duration_s * 1000.0).round() as u64)
            .sum()
    }

    /// `(start_ms, start_rate, phase)` for every phase.
    pub fn timeline(&self) -> Vec<(u64, f64, Phase)> {
        let mut out = Vec::with_capacity(self.phases.len());
        let mut start = 0u64;
        let mut prev_rate = 0.0;
        for p in &self.phases {
            let from = match p.shape {
                PhaseShape::Constant => p.target_rps,
                PhaseShape::LinearRamp => prev_rate,
            };
            out.push((start, from, *p));
            start += (p.duration_s * 1000.0).round() as u64;
            prev_rate = p.target_rps;
        }
        out
    }

    /// Offered rate at `t_s` seconds since trace start.
    pub fn rate_at(&self, t_s: f64) -> f64 {
        for (start, from, p) in self.timeline() {
            let start_s = start as f64 / 1000.0;
            if t_s < start_s + p.duration_s {
                let frac = ((t_s - start_s) / p.duration_s).clamp(0.0, 1.0);
                return from + (p.target_rps - from) * frac;
            }
        }
        self.phases.last().map_or(0.0, |p| p.target_rps)
    }
}

/// Compact text form used on the command line and in trace metadata:
/// comma-separated `duration:rate` (hold) or `duration:from-to` (ramp).
impl fmt::Display for PhaseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (_, from, p)) in self.timeline().into_iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match p.shape {
                PhaseShape::Constant => write!(f, "{}:{}", p.duration_s, p.target_rps)?,
                PhaseShape::LinearRamp => write!(f, "{}:{}-{}", p.duration_s, from, p.target_rps)?,
            }
        }
        Ok(())
    }
}

impl FromStr for PhaseSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Validation(format!("schedule `{s}`: {msg}"));
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("`{t}` is not a number")))
        };
        let mut phases = Vec::new();
        let mut prev_rate = 0.0;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (dur, rate) = part
                .split_once(':')
                .ok_or_else(|| bad(format!("phase `{part}` is not `duration:rate`")))?;
            let duration_s = num(dur)?;
            let phase = match rate.split_once('-') {
                Some((from, to)) => {
                    let from = num(from)?;
                    if (from - prev_rate).abs() > 1e-9 {
                        return Err(bad(format!(
                            "ramp `{part}` starts at {from} but the previous rate is {prev_rate}"
                        )));
                    }
                    Phase::ramp(duration_s, num(to)?)
                }
                None => Phase::constant(duration_s, num(rate)?),
            };
            prev_rate = phase.target_rps;
            phases.push(phase);
        }
        if phases.is_empty() {
            return Err(bad("no phases".into()));
        }
        PhaseSchedule::new(phases)
    }
}

/// Distributions for per-request attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadProfile {
    pub input_median_words: f64,
    /// Log-space standard deviation of the input length.
    pub input_sigma: f64,
    pub input_min_words: u32,
    pub input_max_words: u32,
    pub output_mean_words: f64,
    pub output_std_words: f64,
    pub output_min_words: u32,
    pub output_max_words: u32,
    pub class_weights: BTreeMap<RequestClass, f64>,
}

impl Default for WorkloadProfile {
    fn default() -> Self {
        WorkloadProfile {
            input_median_words: 9_000.0,
            input_sigma: 0.35,
            input_min_words: 2_000,
            input_max_words: 20_000,
            output_mean_words: 500.0,
            output_std_words: 80.0,
            output_min_words: 100,
            output_max_words: 1_200,
            class_weights: BTreeMap::from([(RequestClass::Summarization, 1.0)]),
        }
    }
}

impl WorkloadProfile {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(format!("workload: {m}")));
        if !(self.input_median_words >= 1.0 && self.input_sigma >= 0.0) {
            return fail("input_median_words must be >= 1 and input_sigma >= 0");
        }
        if self.input_min_words == 0 || self.input_min_words > self.input_max_words {
            return fail("need 1 <= input_min_words <= input_max_words");
        }
        if !(self.output_mean_words >= 1.0 && self.output_std_words >= 0.0) {
            return fail("output_mean_words must be >= 1 and output_std_words >= 0");
        }
        if self.output_min_words == 0 || self.output_min_words > self.output_max_words {
            return fail("need 1 <= output_min_words <= output_max_words");
        }
        if self
            .class_weights
            .values()
            .any(|w| !(w.is_finite() && *w >= 0.0))
            || self.class_weights.values().sum::<f64>() <= 0.0
        {
            return fail("class_weights must be non-negative with a positive sum");
        }
        Ok(())
    }

    fn draw_input<R: Rng>(&self, rng: &mut R) -> u32 {
        let dist = LogNormal::new(self.input_median_words.ln(), self.input_sigma)
            .expect("validated lognormal parameters");
        let x: f64 = dist.sample(rng);
        (x.round() as u32).clamp(self.input_min_words, self.input_max_words)
    }

    fn draw_output<R: Rng>(&self, rng: &mut R) -> u32 {
        let dist = Normal::new(self.output_mean_words, self.output_std_words)
            .expect("validated normal parameters");
        let x: f64 = dist.sample(rng);
        (x.round().max(0.0) as u32).clamp(self.output_min_words, self.output_max_words)
    }

    fn draw_class<R: Rng>(&self, rng: &mut R) -> RequestClass {
        let total: f64 = self.class_weights.values().sum();
        let mut u = rng.random::<f64>() * total;
        let mut last = RequestClass::Summarization;
        for (class, w) in &self.class_weights {
            if *w <= 0.0 {
                continue;
            }
            last = *class;
            if u < *w {
                return *class;
            }
            u -= w;
        }
        last
    }
}

/// An immutable, sorted arrival trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub events: Vec<ArrivalEvent>,
    pub duration_ms: u64,
    pub seed: Option<u64>,
    pub schedule: String,
}

impl Trace {
    pub fn empty(duration_ms: u64) -> Self {
        Trace {
            events: Vec::new(),
            duration_ms,
            seed: None,
            schedule: String::new(),
        }
    }

    /// Build a trace from hand-written events (ids and order are checked).
    pub fn from_events(events: Vec<ArrivalEvent>, duration_ms: u64) -> Result<Self> {
        let trace = Trace {
            events,
            duration_ms,
            seed: None,
            schedule: String::new(),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::with_capacity(self.events.len());
        let mut prev = 0u64;
        for (i, e) in self.events.iter().enumerate() {
            if e.arrival_ms < prev {
                return Err(Error::Validation(format!(
                    "event {i} (id {}) arrives at {} ms, before the previous event at {prev} ms",
                    e.request_id, e.arrival_ms
                )));
            }
            prev = e.arrival_ms;
            if e.arrival_ms > self.duration_ms {
                return Err(Error::Validation(format!(
                    "event {i} arrives at {} ms, after the trace end at {} ms",
                    e.arrival_ms, self.duration_ms
                )));
            }
            if e.input_words == 0 || e.unbounded_output_words == 0 {
                return Err(Error::Validation(format!(
                    "event {i}: word counts must be positive"
                )));
            }
            if !ids.insert(e.request_id) {
                return Err(Error::Validation(format!(
                    "duplicate request id {}",
                    e.request_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 + self.events.len() * 32);
        out.push_str(&format!("# duration_ms: {}\n", self.duration_ms));
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed: {seed}\n"));
        }
        if !self.schedule.is_empty() {
            out.push_str(&format!("# schedule: {}\n", self.schedule));
        }
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.request_id, e.arrival_ms, e.input_words, e.unbounded_output_words, e.class
            ));
        }
        out
    }

    /// Parse the text form; `path` only labels error messages.
    pub fn from_csv_str(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut duration_ms = None;
        let mut seed = None;
        let mut schedule = String::new();
        let mut header_seen = false;
        let mut events: Vec<ArrivalEvent> = Vec::new();
        let mut ids = std::collections::HashSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if !header_seen {
                if let Some(comment) = line.strip_prefix('#') {
                    if let Some((key, value)) = comment.split_once(':') {
                        let value = value.trim();
                        match key.trim() {
                            "duration_ms" => {
                                duration_ms = Some(value.parse::<u64>().map_err(|_| {
                                    parse_err(line_no, format!("bad duration_ms `{value}`"))
                                })?)
                            }
                            "seed" => {
                                seed = Some(value.parse::<u64>().map_err(|_| {
                                    parse_err(line_no, format!("bad seed `{value}`"))
                                })?)
                            }
                            "schedule" => schedule = value.to_string(),
                            _ => {}
                        }
                    }
                    continue;
                }
                if line != TRACE_HEADER {
                    return Err(parse_err(
                        line_no,
                        format!("expected header `{TRACE_HEADER}`"),
                    ));
                }
                header_seen = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(parse_err(
                    line_no,
                    format!("expected 5 fields, found {}", fields.len()),
                ));
            }
            let int = |i: usize, name: &str| -> Result<u64> {
                fields[i].trim().parse::<u64>().map_err(|_| {
                    parse_err(
                        line_no,
                        format!("{name} `{}` is not a non-negative integer", fields[i]),
                    )
                })
            };
            let request_id = int(0, "id")?;
            let arrival_ms = int(1, "arrival_ms")?;
            let input_words = u32::try_from(int(2, "input_words")?)
                .map_err(|_| parse_err(line_no, "input_words out of range".into()))?;
            let unbounded_output_words = u32::try_from(int(3, "unbounded_output_words")?)
                .map_err(|_| parse_err(line_no, "unbounded_output_words out of range".into()))?;
            let class = fields[4]
                .trim()
                .parse::<RequestClass>()
                .map_err(|m| parse_err(line_no, m))?;

            let invalid = |message: String| Error::Format {
                path: path.to_path_buf(),
                line: line_no,
                message,
            };
            if input_words == 0 || unbounded_output_words == 0 {
                return Err(invalid("word counts must be at least 1".into()));
            }
            if let Some(prev) = events.last() {
                if arrival_ms < prev.arrival_ms {
                    return Err(invalid(format!(
                        "arrival_ms {arrival_ms} is earlier than the previous record ({})",
                        prev.arrival_ms
                    )));
                }
            }
            if !ids.insert(request_id) {
                return Err(invalid(format!("duplicate id {request_id}")));
            }
            events.push(ArrivalEvent {
                request_id,
                arrival_ms,
                input_words,
                unbounded_output_words,
                class,
            });
        }
        if !header_seen {
            return Err(parse_err(
                text.lines().count().max(1),
                "missing header".into(),
            ));
        }
        let duration_ms = duration_ms.unwrap_or_else(|| events.last().map_or(0, |e| e.arrival_ms));
        let trace = Trace {
            events,
            duration_ms,
            seed,
            schedule,
        };
        trace.validate()?;
        Ok(trace)
    }

    /// FNV-1a over the serialized form; used to check two runs share a trace.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.to_csv_string().as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    fs::write(path, trace.to_csv_string()).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Trace::from_csv_str(&text, path)
}

/// Arrival offsets (seconds from phase start) for one phase.
fn phase_arrivals<R: Rng>(from_rps: f64, phase: &Phase, rng: &mut R) -> Vec<f64> {
    let peak = from_rps.max(phase.target_rps);
    if peak <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(peak).expect("positive rate");
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += gap.sample(rng);
        if t >= phase.duration_s {
            break;
        }
        match phase.shape {
            PhaseShape::Constant => out.push(t),
            PhaseShape::LinearRamp => {
                // Thinning: accept with probability rate(t) / peak.
                let rate = from_rps + (phase.target_rps - from_rps) * (t / phase.duration_s);
                let u: f64 = rng.random();
                if u * peak < rate {
                    out.push(t);
                }
            }
        }
    }
    out
}

/// Generate a trace. Phase `i` draws from its own streams keyed by
/// `first_phase_index + i`, so a schedule can be generated piecewise.
pub fn generate_trace(
    schedule: &PhaseSchedule,
    workload: &WorkloadProfile,
    seed: u64,
) -> Result<Trace> {
    generate_phases(schedule, workload, seed, 0)
}

pub fn generate_phases(
    schedule: &PhaseSchedule,
    workload: &WorkloadProfile,
    seed: u64,
    first_phase_index: u64,
) -> Result<Trace> {
    schedule.validate()?;
    workload.validate()?;
    let mut events = Vec::new();
    for (i, (start_ms, from, phase)) in schedule.timeline().into_iter().enumerate() {
        let key = first_phase_index + i as u64;
        let mut arrivals = substream(seed, Stream::Arrivals, key);
        let mut inputs = substream(seed, Stream::InputLength, key);
        let mut outputs = substream(seed, Stream::OutputLength, key);
        let mut classes = substream(seed, Stream::Class, key);
        let phase_ms = (phase.duration_s * 1000.0).round() as u64;
        for t in phase_arrivals(from, &phase, &mut arrivals) {
            let offset = ((t * 1000.0).floor() as u64).min(phase_ms.saturating_sub(1));
            events.push(ArrivalEvent {
                request_id: events.len() as u64,
                arrival_ms: start_ms + offset,
                input_words: workload.draw_input(&mut inputs),
                unbounded_output_words: workload.draw_output(&mut outputs),
                class: workload.draw_class(&mut classes),
            });
        }
    }
    Ok(Trace {
        events,
        duration_ms: schedule.duration_ms(),
        seed: Some(seed),
        schedule: schedule.to_string(),
    })
}

/// The two-peak 22-minute trace.
pub fn paper_trace(workload: &WorkloadProfile, seed: u64) -> Result<Trace> {
    generate_trace(&PhaseSchedule::paper(), workload, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> WorkloadProfile {
        WorkloadProfile::default()
    }

    #[test]
    fn constant_phase_count_is_in_poisson_band() {
        let schedule = PhaseSchedule::new(vec![Phase::constant(90.0, 2.5)]).unwrap();
        for seed in 0..20 {
            let n = generate_trace(&schedule, &profile(), seed)
                .unwrap()
                .events
                .len();
            assert!((165..=285).contains(&n), "seed {seed}: {n} events");
        }
    }

    #[test]
    fn zero_rate_phase_is_empty() {
        let schedule = PhaseSchedule::new(vec![Phase::constant(60.0, 0.0)]).unwrap();
        let trace = generate_trace(&schedule, &profile(), 3).unwrap();
        assert!(trace.events.is_empty());
        assert_eq!(trace.duration_ms, 60_000);
    }

    #[test]
    fn second_phase_starts_after_first() {
        let schedule =
            PhaseSchedule::new(vec![Phase::constant(30.0, 2.0), Phase::constant(30.0, 3.0)])
                .unwrap();
        let plain = generate_trace(&schedule, &profile(), 11).unwrap();
        let first_only = generate_trace(
            &PhaseSchedule::new(vec![schedule.phases[0]]).unwrap(),
            &profile(),
            11,
        )
        .unwrap();
        let n1 = first_only.events.len();
        assert!(plain.events[..n1].iter().all(|e| e.arrival_ms < 30_000));
        assert!(plain.events[n1..].iter().all(|e| e.arrival_ms >= 30_000));
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(PhaseSchedule::new(vec![Phase::constant(0.0, 1.0)]).is_err());
        assert!(PhaseSchedule::new(vec![Phase::constant(-5.0, 1.0)]).is_err());
        assert!(PhaseSchedule::new(vec![Phase::constant(5.0, -1.0)]).is_err());
    }

    #[test]
    fn paper_trace_has_fixed_duration() {
        for seed in [0, 1, 7, 99] {
            assert_eq!(
                paper_trace(&profile(), seed).unwrap().duration_ms,
                1_320_000
            );
        }
    }

    #[test]
    fn schedule_string_round_trips() {
        let s: PhaseSchedule = "60:0-2.5,90:2.5".parse().unwrap();
        assert_eq!(
            s.phases,
            vec![Phase::ramp(60.0, 2.5), Phase::constant(90.0, 2.5)]
        );
        assert_eq!(s.to_string(), "60:0-2.5,90:2.5");
        let paper = PhaseSchedule::paper();
        assert_eq!(paper.to_string().parse::<PhaseSchedule>().unwrap(), paper);
        assert!("60:1-2.5".parse::<PhaseSchedule>().is_err());
        assert!("sixty:2".parse::<PhaseSchedule>().is_err());
        assert!("".parse::<PhaseSchedule>().is_err());
    }

    #[test]
    fn rate_at_interpolates_ramps() {
        let paper = PhaseSchedule::paper();
        assert_eq!(paper.rate_at(0.0), 0.0);
        assert!((paper.rate_at(30.0) - 1.25).abs() < 1e-12);
        assert_eq!(paper.rate_at(100.0), 2.5);
        assert_eq!(paper.rate_at(500.0), 0.2);
    }

    #[test]
    fn empty_trace_round_trips_to_header_only() {
        let t = Trace::empty(1_000);
        let text = t.to_csv_string();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1);
        assert_eq!(Trace::from_csv_str(&text, Path::new("t.csv")).unwrap(), t);
    }

    #[test]
    fn decreasing_arrival_cites_line() {
        let text = format!(
            "{TRACE_HEADER}\n0,10,100,50,summarization\n1,20,100,50,summarization\n\
             2,30,100,50,coding\n3,25,100,50,summarization\n"
        );
        match Trace::from_csv_str(&text, Path::new("t.csv")) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text =
            format!("# seed: 1\n{TRACE_HEADER}\n0,10,100,50,summarization\n1,x,1,1,coding\n");
        match Trace::from_csv_str(&text, Path::new("t.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = format!("{TRACE_HEADER}\n# late comment\n");
        assert!(matches!(
            Trace::from_csv_str(&text, Path::new("t.csv")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn class_weights_are_respected() {
        let mut w = profile();
        w.class_weights = BTreeMap::from([
            (RequestClass::Summarization, 0.5),
            (RequestClass::Coding, 0.5),
        ]);
        let schedule = PhaseSchedule::new(vec![Phase::constant(400.0, 2.5)]).unwrap();
        let trace = generate_trace(&schedule, &w, 5).unwrap();
        let coding = trace
            .events
            .iter()
            .filter(|e| e.class == RequestClass::Coding)
            .count() as f64;
        let frac = coding / trace.events.len() as f64;
        assert!((frac - 0.5).abs() < 0.06, "coding fraction {frac}");
    }
}
