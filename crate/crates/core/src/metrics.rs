//! Per-second series, run summaries, and unbounded-vs-bounded comparison.
//!
//! Aggregation works from request timestamps, so it can be recomputed from
//! a run's output directory (see [`RunRecord`]) as well as from a live
//! [`RunResult`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::sim::{pj_to_j, RunResult, US_PER_S};
use crate::trace::RequestClass;
use crate::workload_models::{similarity_score, QualityModel};

pub const PER_SECOND_HEADER: &str =
    "second,rps_in,queue_depth,avg_queueing_ms,avg_ttft_ms,avg_tbt_ms,avg_e2e_ms,active_r,completions,energy_j";
pub const CONTROLLER_LOG_HEADER: &str = "second,ma_tbt_ms,r,active";
pub const REQUESTS_HEADER: &str = "id,class,arrival_ms,input_words,unbounded_output_words,predicted_len,r_applied,target_n,realized_output_words,words_emitted,dispatch_ms,first_token_ms,completion_ms";

/// Nearest-rank percentile: the element at 1-based rank `ceil(p/100 · n)`
/// of the sorted samples; `p = 0` gives the minimum.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Domain(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Exact for integral p: p·n is computed in integers where possible.
    let rank = if p.fract() == 0.0 {
        (p as usize * n).div_ceil(100)
    } else {
        (p / 100.0 * n as f64).ceil() as usize
    };
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Metrics attributed to one simulated second.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondAggregate {
    pub second: u64,
    pub rps_in: u64,
    /// Requests waiting for admission at the end of the second.
    pub queue_depth: u64,
    /// Admitted but unfinished requests at the end of the second.
    pub in_flight: u64,
    pub avg_queueing_ms: Option<f64>,
    pub avg_ttft_ms: Option<f64>,
    pub avg_tbt_ms: Option<f64>,
    pub avg_e2e_ms: Option<f64>,
    pub active_r: f64,
    pub completions: u64,
    pub energy_pj: u128,
}

impl SecondAggregate {
    pub fn energy_j(&self) -> f64 {
        pj_to_j(self.energy_pj)
    }
}

#[derive(Default, Clone, Copy)]
struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn get(self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

fn sec(us: u64) -> usize {
    (us / US_PER_S) as usize
}

/// Bucket a run into one row per simulated second.
pub fn aggregate_per_second(run: &RunResult) -> Vec<SecondAggregate> {
    let n = run.horizon_s as usize;
    if n == 0 {
        return Vec::new();
    }
    let mut rps = vec![0u64; n];
    let mut completions = vec![0u64; n];
    let mut energy = vec![0u128; n];
    let mut queueing = vec![Mean::default(); n];
    let mut ttft = vec![Mean::default(); n];
    let mut tbt = vec![Mean::default(); n];
    let mut e2e = vec![Mean::default(); n];
    // +1 when a request enters a state, -1 when it leaves; prefix sums give
    // end-of-second counts.
    let mut queue_delta = vec![0i64; n + 1];
    let mut flight_delta = vec![0i64; n + 1];

    let e_in = run.server.e_in_pj();
    let e_out = run.server.e_out_pj();
    let p_idle = run.server.p_idle_uw();

    for r in &run.requests {
        let arrival = r.arrival_us();
        rps[sec(arrival)] += 1;
        queue_delta[sec(arrival)] += 1;
        if let Some(admit) = r.admitted_us {
            queue_delta[sec(admit)] -= 1;
            flight_delta[sec(admit)] += 1;
        } else {
            continue;
        }
        if let Some(d) = r.dispatch_us {
            // A dispatch delayed past a cutoff is booked in the last second.
            let d = d.min(run.horizon_s * US_PER_S - 1);
            energy[sec(d)] += u128::from(r.event.input_words) * e_in;
            queueing[sec(d)].add(r.queueing_ms().unwrap_or_default());
        }
        if let Some(t) = r.first_token_us {
            ttft[sec(t)].add(r.ttft_ms().unwrap_or_default());
        }
        for (i, t) in r.word_times_us().enumerate() {
            energy[sec(t)] += e_out;
            if i > 0 {
                tbt[sec(t)].add(f64::from(r.tbt_samples_us[i - 1]) / 1000.0);
            }
        }
        if let Some(c) = r.completion_us {
            completions[sec(c)] += 1;
            flight_delta[sec(c)] -= 1;
            e2e[sec(c)].add(r.e2e_ms().unwrap_or_default());
        }
    }

    for &(a, b) in &run.idle_intervals_us {
        let mut t = a;
        while t < b {
            let s = sec(t);
            let stop = b.min((s as u64 + 1) * US_PER_S);
            energy[s] += u128::from(stop - t) * p_idle;
            t = stop;
        }
    }

    let active_r = r_per_second(run, n);
    let mut queued = 0i64;
    let mut in_flight = 0i64;
    (0..n)
        .map(|s| {
            queued += queue_delta[s];
            in_flight += flight_delta[s];
            SecondAggregate {
                second: s as u64,
                rps_in: rps[s],
                queue_depth: queued as u64,
                in_flight: in_flight as u64,
                avg_queueing_ms: queueing[s].get(),
                avg_ttft_ms: ttft[s].get(),
                avg_tbt_ms: tbt[s].get(),
                avg_e2e_ms: e2e[s].get(),
                active_r: active_r[s],
                completions: completions[s],
                energy_pj: energy[s],
            }
        })
        .collect()
}

/// The reduction rate in effect during each second: set by the sample of
/// an earlier second and held until the next sample.
fn r_per_second(run: &RunResult, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut log = run.controller_log.iter().peekable();
    let mut r = 0.0;
    for (s, slot) in out.iter_mut().enumerate() {
        while let Some(sample) = log.next_if(|c| (c.second as usize) < s) {
            r = sample.r;
        }
        *slot = r;
    }
    out
}

/// Per-request outcome as recorded in `requests.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub id: u64,
    pub class: RequestClass,
    pub arrival_ms: u64,
    pub input_words: u32,
    pub unbounded_output_words: u32,
    pub predicted_len: Option<u32>,
    pub r_applied: f64,
    pub target_n: Option<u32>,
    pub realized_output_words: u32,
    pub words_emitted: u32,
    pub dispatch_ms: Option<f64>,
    pub first_token_ms: Option<f64>,
    pub completion_ms: Option<f64>,
}

impl RequestRecord {
    pub fn e2e_ms(&self) -> Option<f64> {
        self.completion_ms.map(|c| c - self.arrival_ms as f64)
    }
}

/// What a comparison needs from a run; reconstructible from its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub trace_fingerprint: u64,
    pub horizon_s: u64,
    pub per_second: Vec<SecondAggregate>,
    pub requests: Vec<RequestRecord>,
    pub activation_s: Option<u64>,
    pub deactivation_s: Option<u64>,
}

fn us_opt_ms(us: Option<u64>) -> Option<f64> {
    us.map(|u| u as f64 / 1000.0)
}

impl RunRecord {
    pub fn from_run(run: &RunResult) -> Self {
        let requests = run
            .requests
            .iter()
            .map(|r| RequestRecord {
                id: r.event.request_id,
                class: r.event.class,
                arrival_ms: r.event.arrival_ms,
                input_words: r.event.input_words,
                unbounded_output_words: r.event.unbounded_output_words,
                predicted_len: r.rewrite.as_ref().and_then(|d| d.predicted_len),
                r_applied: r.r_applied(),
                target_n: r.rewrite.as_ref().and_then(|d| d.target_n),
                realized_output_words: r.realized_output_words,
                words_emitted: r.words_emitted,
                dispatch_ms: us_opt_ms(r.dispatch_us),
                first_token_ms: us_opt_ms(r.first_token_us),
                completion_ms: us_opt_ms(r.completion_us),
            })
            .collect();
        RunRecord {
            seed: run.seed,
            trace_fingerprint: run.trace_fingerprint,
            horizon_s: run.horizon_s,
            per_second: aggregate_per_second(run),
            requests,
            activation_s: run.activation_second(),
            deactivation_s: run.deactivation_second(),
        }
    }

    /// Last second whose end-of-second queue exceeds `depth`.
    pub fn last_second_with_queue_above(&self, depth: u64) -> Option<u64> {
        self.per_second
            .iter()
            .rev()
            .find(|s| s.queue_depth > depth)
            .map(|s| s.second)
    }

    fn window_rows(&self, w: Window) -> &[SecondAggregate] {
        &self.per_second[w.start_s as usize..w.end_s as usize]
    }

    /// Load `per_second.csv`, `requests.csv` and `summary.txt` from a run
    /// output directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let summary_path = dir.join("summary.txt");
        let summary = read_file(&summary_path)?;
        let field = |key: &str| -> Result<&str> {
            summary
                .lines()
                .find_map(|l| l.strip_prefix(key)?.strip_prefix(": "))
                .map(str::trim)
                .ok_or_else(|| Error::Format {
                    path: summary_path.clone(),
                    line: 0,
                    message: format!("missing key `{key}`"),
                })
        };
        let parse_u64 = |key: &str| -> Result<u64> {
            let v = field(key)?;
            let parsed = match v.strip_prefix("0x") {
                Some(hex) => u64::from_str_radix(hex, 16).ok(),
                None => v.parse().ok(),
            };
            parsed.ok_or_else(|| Error::Format {
                path: summary_path.clone(),
                line: 0,
                message: format!("`{key}` is not an integer: {v}"),
            })
        };
        let optional_second = |key: &str| -> Result<Option<u64>> {
            match field(key)? {
                "none" => Ok(None),
                _ => parse_u64(key).map(Some),
            }
        };
        let seed = parse_u64("seed")?;
        let trace_fingerprint = parse_u64("trace_fingerprint")?;
        let horizon_s = parse_u64("horizon_s")?;
        let activation_s = optional_second("controller_activation_s")?;
        let deactivation_s = optional_second("controller_deactivation_s")?;

        let per_second = parse_per_second(&dir.join("per_second.csv"))?;
        let requests = parse_requests(&dir.join("requests.csv"))?;
        Ok(RunRecord {
            seed,
            trace_fingerprint,
            horizon_s,
            per_second,
            requests,
            activation_s,
            deactivation_s,
        })
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

struct CsvRows<'a> {
    path: &'a Path,
    line: usize,
}

impl CsvRows<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn opt<T: std::str::FromStr>(&self, cell: &str, name: &str) -> Result<Option<T>> {
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse()
            .map(Some)
            .map_err(|_| self.err(format!("bad {name}: `{cell}`")))
    }

    fn req<T: std::str::FromStr>(&self, cell: &str, name: &str) -> Result<T> {
        self.opt(cell, name)?
            .ok_or_else(|| self.err(format!("missing {name}")))
    }
}

fn csv_body<'a>(text: &'a str, path: &Path, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header `{header}`"),
            })
        }
    }
    let columns = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected {columns} fields, found {}", cells.len()),
            });
        }
        rows.push((i + 1, cells));
    }
    Ok(rows)
}

/// Parse a per-second CSV written by [`per_second_csv`].
pub fn parse_per_second(path: &Path) -> Result<Vec<SecondAggregate>> {
    let text = read_file(path)?;
    let mut out = Vec::new();
    for (line, c) in csv_body(&text, path, PER_SECOND_HEADER)? {
        let p = CsvRows { path, line };
        let energy_j: f64 = p.req(c[9], "energy_j")?;
        out.push(SecondAggregate {
            second: p.req(c[0], "second")?,
            rps_in: p.req(c[1], "rps_in")?,
            queue_depth: p.req(c[2], "queue_depth")?,
            in_flight: 0,
            avg_queueing_ms: p.opt(c[3], "avg_queueing_ms")?,
            avg_ttft_ms: p.opt(c[4], "avg_ttft_ms")?,
            avg_tbt_ms: p.opt(c[5], "avg_tbt_ms")?,
            avg_e2e_ms: p.opt(c[6], "avg_e2e_ms")?,
            active_r: p.req(c[7], "active_r")?,
            completions: p.req(c[8], "completions")?,
            energy_pj: (energy_j * 1e12).round() as u128,
        });
    }
    Ok(out)
}

fn parse_requests(path: &Path) -> Result<Vec<RequestRecord>> {
    let text = read_file(path)?;
    let mut out = Vec::new();
    for (line, c) in csv_body(&text, path, REQUESTS_HEADER)? {
        let p = CsvRows { path, line };
        out.push(RequestRecord {
            id: p.req(c[0], "id")?,
            class: p.req(c[1], "class")?,
            arrival_ms: p.req(c[2], "arrival_ms")?,
            input_words: p.req(c[3], "input_words")?,
            unbounded_output_words: p.req(c[4], "unbounded_output_words")?,
            predicted_len: p.opt(c[5], "predicted_len")?,
            r_applied: p.req(c[6], "r_applied")?,
            target_n: p.opt(c[7], "target_n")?,
            realized_output_words: p.req(c[8], "realized_output_words")?,
            words_emitted: p.req(c[9], "words_emitted")?,
            dispatch_ms: p.opt(c[10], "dispatch_ms")?,
            first_token_ms: p.opt(c[11], "first_token_ms")?,
            completion_ms: p.opt(c[12], "completion_ms")?,
        });
    }
    Ok(out)
}

fn cell<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn per_second_csv(rows: &[SecondAggregate]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(PER_SECOND_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.second,
            r.rps_in,
            r.queue_depth,
            cell(r.avg_queueing_ms),
            cell(r.avg_ttft_ms),
            cell(r.avg_tbt_ms),
            cell(r.avg_e2e_ms),
            r.active_r,
            r.completions,
            r.energy_j()
        );
    }
    out
}

pub fn controller_log_csv(run: &RunResult) -> String {
    let mut out = String::from(CONTROLLER_LOG_HEADER);
    out.push('\n');
    for s in &run.controller_log {
        let _ = writeln!(out, "{},{},{},{}", s.second, s.ma_tbt_ms, s.r, s.active);
    }
    out
}

pub fn requests_csv(record: &RunRecord) -> String {
    let mut out = String::from(REQUESTS_HEADER);
    out.push('\n');
    for r in &record.requests {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            r.class,
            r.arrival_ms,
            r.input_words,
            r.unbounded_output_words,
            cell(r.predicted_len),
            r.r_applied,
            cell(r.target_n),
            r.realized_output_words,
            r.words_emitted,
            cell(r.dispatch_ms),
            cell(r.first_token_ms),
            cell(r.completion_ms)
        );
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:.3}"))
}

fn fmt_second(v: Option<u64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// Key: value run summary.
pub fn summary_text(run: &RunResult, record: &RunRecord, mode: &str) -> String {
    let done: Vec<_> = run.completed().collect();
    let pct = |f: &dyn Fn(&crate::sim::RequestState) -> Option<f64>, p: f64| {
        let v: Vec<f64> = done.iter().filter_map(|r| f(r)).collect();
        percentile(&v, p).ok()
    };
    let tbt: Vec<f64> = record
        .per_second
        .iter()
        .filter_map(|s| s.avg_tbt_ms)
        .collect();
    let rewritten: Vec<f64> = run
        .requests
        .iter()
        .map(|r| r.r_applied())
        .filter(|r| *r > 0.0)
        .collect();
    let output_words: u64 = run
        .requests
        .iter()
        .map(|r| u64::from(r.words_emitted))
        .sum();

    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}: {v}");
    };
    kv("mode", mode.to_string());
    kv(
        "controller",
        run.controller_name.unwrap_or("none").to_string(),
    );
    kv("seed", run.seed.to_string());
    kv(
        "trace_fingerprint",
        format!("{:#018x}", run.trace_fingerprint),
    );
    kv("horizon_s", run.horizon_s.to_string());
    kv("truncated", run.truncated.to_string());
    kv("arrivals", run.requests.len().to_string());
    kv("completions", done.len().to_string());
    kv("output_words", output_words.to_string());
    kv(
        "output_tokens_est",
        format!("{:.0}", output_words as f64 * run.server.tokens_per_word),
    );
    kv("total_energy_j", format!("{:.3}", run.total_energy_j()));
    for (name, p) in [("p50", 50.0), ("p90", 90.0), ("p99", 99.0)] {
        kv(
            &format!("queueing_ms_{name}"),
            fmt_opt(pct(&|r| r.queueing_ms(), p)),
        );
        kv(
            &format!("ttft_ms_{name}"),
            fmt_opt(pct(&|r| r.ttft_ms(), p)),
        );
        kv(&format!("e2e_ms_{name}"), fmt_opt(pct(&|r| r.e2e_ms(), p)));
    }
    kv(
        "second_avg_tbt_ms_p50",
        fmt_opt(percentile(&tbt, 50.0).ok()),
    );
    kv(
        "second_avg_tbt_ms_p75",
        fmt_opt(percentile(&tbt, 75.0).ok()),
    );
    kv(
        "peak_second_avg_e2e_ms",
        fmt_opt(
            record
                .per_second
                .iter()
                .filter_map(|s| s.avg_e2e_ms)
                .reduce(f64::max),
        ),
    );
    kv("rewritten_requests", rewritten.len().to_string());
    kv(
        "median_r_rewritten",
        fmt_opt(percentile(&rewritten, 50.0).ok()),
    );
    kv("controller_activation_s", fmt_second(record.activation_s));
    kv(
        "controller_deactivation_s",
        fmt_second(record.deactivation_s),
    );
    kv("controller_transitions", run.transitions.len().to_string());
    s
}

/// Half-open range of whole seconds `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start_s: u64,
    pub end_s: u64,
}

impl Window {
    pub const PRESET: Window = Window {
        start_s: 130,
        end_s: 500,
    };

    pub fn new(start_s: u64, end_s: u64) -> Result<Self> {
        if start_s >= end_s {
            return Err(Error::Validation(format!(
                "window start {start_s} must precede end {end_s}"
            )));
        }
        Ok(Window { start_s, end_s })
    }

    pub fn contains(&self, second: u64) -> bool {
        (self.start_s..self.end_s).contains(&second)
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("window must look like `start:end`, got `{s}`"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        Window::new(a, b)
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.start_s, self.end_s)
    }
}

/// From one second before the controller first activates until the
/// unbounded run's queue last exceeds `queue_depth`.
pub fn default_window(
    unbounded: &RunRecord,
    bounded: &RunRecord,
    queue_depth: u64,
) -> Result<Window> {
    let start = bounded
        .activation_s
        .ok_or_else(|| Error::Validation("the bounded run never activated its controller".into()))?
        .saturating_sub(1);
    let end = unbounded
        .last_second_with_queue_above(queue_depth)
        .map_or(0, |s| s + 1)
        .min(unbounded.horizon_s.min(bounded.horizon_s));
    Window::new(start, end)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunComparison {
    pub window: Window,
    /// `None` when either run completes nothing inside the window.
    pub e2e_peak_ratio: Option<f64>,
    pub e2e_peak_unbounded_ms: Option<f64>,
    pub e2e_peak_bounded_ms: Option<f64>,
    pub completions_unbounded: u64,
    pub completions_bounded: u64,
    pub completions_delta_pct: Option<f64>,
    pub energy_unbounded_j: f64,
    pub energy_bounded_j: f64,
    pub energy_delta_pct: Option<f64>,
    pub rewritten_requests: usize,
    pub median_r_active: Option<f64>,
    pub similarity_median_active: Option<f64>,
    pub similarity_median_inactive: Option<f64>,
}

fn delta_pct(base: f64, new: f64) -> Option<f64> {
    (base != 0.0).then(|| (new - base) / base * 100.0)
}

/// Score each completed bounded request against its unbounded counterpart.
/// Returns `(rewritten, untouched)` score lists.
pub fn similarity_scores(
    unbounded: &RunRecord,
    bounded: &RunRecord,
    quality: &QualityModel,
) -> (Vec<f64>, Vec<f64>) {
    let reference: std::collections::HashMap<u64, &RequestRecord> =
        unbounded.requests.iter().map(|r| (r.id, r)).collect();
    let mut active = Vec::new();
    let mut inactive = Vec::new();
    for b in bounded
        .requests
        .iter()
        .filter(|r| r.completion_ms.is_some())
    {
        let Some(u) = reference.get(&b.id).filter(|u| u.completion_ms.is_some()) else {
            continue;
        };
        let base_len = f64::from(u.realized_output_words);
        let reduction = (base_len - f64::from(b.realized_output_words)) / base_len;
        let rewritten = b.r_applied > 0.0;
        let mut rng = substream(bounded.seed, Stream::Quality, b.id);
        let score = similarity_score(reduction, rewritten, quality, &mut rng);
        if rewritten {
            active.push(score);
        } else {
            inactive.push(score);
        }
    }
    (active, inactive)
}

/// Compare two runs of the same trace and seed over `window`.
pub fn compare_runs(
    unbounded: &RunRecord,
    bounded: &RunRecord,
    window: Window,
    quality: &QualityModel,
) -> Result<RunComparison> {
    if unbounded.trace_fingerprint != bounded.trace_fingerprint {
        return Err(Error::ComparisonInvalid(format!(
            "runs used different traces ({:#x} vs {:#x})",
            unbounded.trace_fingerprint, bounded.trace_fingerprint
        )));
    }
    if unbounded.seed != bounded.seed {
        return Err(Error::ComparisonInvalid(format!(
            "runs used different seeds ({} vs {})",
            unbounded.seed, bounded.seed
        )));
    }
    let limit = unbounded.per_second.len().min(bounded.per_second.len()) as u64;
    if window.end_s > limit {
        return Err(Error::Validation(format!(
            "window {window} extends past the shorter run's horizon of {limit} s"
        )));
    }
    let (u, b) = (unbounded.window_rows(window), bounded.window_rows(window));
    let peak = |rows: &[SecondAggregate]| rows.iter().filter_map(|s| s.avg_e2e_ms).reduce(f64::max);
    let completions = |rows: &[SecondAggregate]| rows.iter().map(|s| s.completions).sum::<u64>();
    let energy = |rows: &[SecondAggregate]| pj_to_j(rows.iter().map(|s| s.energy_pj).sum());

    let (pu, pb) = (peak(u), peak(b));
    let (cu, cb) = (completions(u), completions(b));
    let (eu, eb) = (energy(u), energy(b));
    let rs: Vec<f64> = bounded
        .requests
        .iter()
        .map(|r| r.r_applied)
        .filter(|r| *r > 0.0)
        .collect();
    let (sim_active, sim_inactive) = similarity_scores(unbounded, bounded, quality);

    Ok(RunComparison {
        window,
        e2e_peak_ratio: pu.zip(pb).filter(|(_, b)| *b > 0.0).map(|(u, b)| u / b),
        e2e_peak_unbounded_ms: pu,
        e2e_peak_bounded_ms: pb,
        completions_unbounded: cu,
        completions_bounded: cb,
        completions_delta_pct: delta_pct(cu as f64, cb as f64),
        energy_unbounded_j: eu,
        energy_bounded_j: eb,
        energy_delta_pct: delta_pct(eu, eb),
        rewritten_requests: rs.len(),
        median_r_active: percentile(&rs, 50.0).ok(),
        similarity_median_active: percentile(&sim_active, 50.0).ok(),
        similarity_median_inactive: percentile(&sim_inactive, 50.0).ok(),
    })
}

pub fn comparison_text(c: &RunComparison) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}: {v}");
    };
    kv("window", c.window.to_string());
    kv("e2e_peak_unbounded_ms", fmt_opt(c.e2e_peak_unbounded_ms));
    kv("e2e_peak_bounded_ms", fmt_opt(c.e2e_peak_bounded_ms));
    kv("e2e_peak_ratio", fmt_opt(c.e2e_peak_ratio));
    kv("completions_unbounded", c.completions_unbounded.to_string());
    kv("completions_bounded", c.completions_bounded.to_string());
    kv("completions_delta_pct", fmt_opt(c.completions_delta_pct));
    kv("energy_unbounded_j", format!("{:.3}", c.energy_unbounded_j));
    kv("energy_bounded_j", format!("{:.3}", c.energy_bounded_j));
    kv("energy_delta_pct", fmt_opt(c.energy_delta_pct));
    kv("rewritten_requests", c.rewritten_requests.to_string());
    kv("median_r_active", fmt_opt(c.median_r_active));
    kv(
        "similarity_median_active",
        fmt_opt(c.similarity_median_active),
    );
    kv(
        "similarity_median_inactive",
        fmt_opt(c.similarity_median_inactive),
    );
    s
}

/// Both per-second series joined on `second`, columns suffixed
/// `_unbounded` / `_bounded`.
pub fn side_by_side_csv(unbounded: &[SecondAggregate], bounded: &[SecondAggregate]) -> String {
    let cols: Vec<&str> = PER_SECOND_HEADER.split(',').skip(1).collect();
    let mut out = String::from("second");
    for suffix in ["unbounded", "bounded"] {
        for c in &cols {
            let _ = write!(out, ",{c}_{suffix}");
        }
    }
    out.push('\n');
    let n = unbounded.len().max(bounded.len());
    let blank = ",".repeat(cols.len());
    let row = |r: Option<&SecondAggregate>| match r {
        None => blank.clone(),
        Some(r) => format!(
            ",{},{},{},{},{},{},{},{},{}",
            r.rps_in,
            r.queue_depth,
            cell(r.avg_queueing_ms),
            cell(r.avg_ttft_ms),
            cell(r.avg_tbt_ms),
            cell(r.avg_e2e_ms),
            r.active_r,
            r.completions,
            r.energy_j()
        ),
    };
    for s in 0..n {
        let _ = writeln!(out, "{s}{}{}", row(unbounded.get(s)), row(bounded.get(s)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=11).map(|i| f64::from(i * 10)).collect();
        assert_eq!(percentile(&v, 50.0).unwrap(), 60.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 10.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 110.0);
        assert_eq!(percentile(&[7.0], 75.0).unwrap(), 7.0);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&v, 101.0).is_err());
    }

    #[test]
    fn delta_arithmetic() {
        assert!((delta_pct(100.0, 119.0).unwrap() - 19.0).abs() < 1e-12);
        assert!((delta_pct(1000.0, 750.0).unwrap() + 25.0).abs() < 1e-12);
        assert_eq!(delta_pct(0.0, 5.0), None);
    }

    #[test]
    fn window_parsing() {
        assert_eq!("130:500".parse::<Window>().unwrap(), Window::PRESET);
        assert!("500:130".parse::<Window>().is_err());
        assert!("abc".parse::<Window>().is_err());
    }

    proptest! {
        #[test]
        fn median_of_odd_list_is_middle(mut v in prop::collection::vec(-1e6f64..1e6, 0..50usize)) {
            if v.len() % 2 == 0 {
                v.push(0.0);
            }
            let m = percentile(&v, 50.0).unwrap();
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(m, sorted[v.len() / 2]);
        }

        #[test]
        fn percentile_is_an_observed_value(v in prop::collection::vec(0f64..1e3, 1..40usize), p in 0f64..=100.0) {
            let x = percentile(&v, p).unwrap();
            prop_assert!(v.contains(&x));
        }
    }
}
