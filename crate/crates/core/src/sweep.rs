//! Offered-load sweeps: one constant-rate simulation per RPS value, run in
//! parallel, each reporting whether its queue settles or keeps growing.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_per_second, percentile, SecondAggregate};
use crate::rng::{derive_seed, Stream};
use crate::sim::{run_simulation, RunOptions};
use crate::trace::{generate_trace, Phase, PhaseSchedule};

pub const SWEEP_HEADER: &str = "rps,arrivals,completions,final_queue_depth,queue_slope_per_s,e2e_ms_p50,e2e_ms_p99,ttft_ms_p50,tbt_ms_p50";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub rps: f64,
    pub arrivals: usize,
    pub completions: usize,
    pub final_queue_depth: u64,
    /// Least-squares slope of queue depth over the second half of the run,
    /// in requests per second.
    pub queue_slope: f64,
    pub e2e_ms_p50: Option<f64>,
    pub e2e_ms_p99: Option<f64>,
    pub ttft_ms_p50: Option<f64>,
    /// Median of the per-second average TBT.
    pub tbt_ms_p50: Option<f64>,
}

/// `start, start + step, …` up to and including `end` (within rounding).
pub fn rps_values(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Validation(format!(
            "sweep step must be positive, got {step}"
        )));
    }
    if !(start.is_finite() && end.is_finite() && start >= 0.0 && end >= start) {
        return Err(Error::Validation(format!(
            "sweep range {start}..{end} must be non-negative and ascending"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    // Round to suppress accumulated float error in labels like 2.6000000000000005.
    Ok((0..=n)
        .map(|i| ((start + step * i as f64) * 1e9).round() / 1e9)
        .collect())
}

/// Parse `a..b` into its bounds.
pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Validation(format!("range must look like `a..b`, got `{s}`"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

/// Ordinary least-squares slope of queue depth against time over the
/// second half of the series.
pub fn queue_growth_slope(rows: &[SecondAggregate]) -> f64 {
    let tail = &rows[rows.len() / 2..];
    if tail.len() < 2 {
        return 0.0;
    }
    let n = tail.len() as f64;
    let mx = tail.iter().map(|r| r.second as f64).sum::<f64>() / n;
    let my = tail.iter().map(|r| r.queue_depth as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in tail {
        let dx = r.second as f64 - mx;
        sxy += dx * (r.queue_depth as f64 - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn run_point(cfg: &RunConfig, rps: f64, duration_s: f64, index: usize) -> Result<SweepPoint> {
    let seed = derive_seed(cfg.run.seed, Stream::Sweep, index as u64);
    let schedule = PhaseSchedule::new(vec![Phase::constant(duration_s, rps)])?;
    let trace = generate_trace(&schedule, &cfg.workload, seed)?;
    let run = run_simulation(
        &trace,
        &cfg.server,
        &cfg.models,
        None,
        seed,
        &RunOptions {
            cutoff_s: Some(duration_s),
        },
    )?;
    let rows = aggregate_per_second(&run);
    let done: Vec<_> = run.completed().collect();
    let e2e: Vec<f64> = done.iter().filter_map(|r| r.e2e_ms()).collect();
    let ttft: Vec<f64> = done.iter().filter_map(|r| r.ttft_ms()).collect();
    let tbt: Vec<f64> = rows.iter().filter_map(|r| r.avg_tbt_ms).collect();
    Ok(SweepPoint {
        rps,
        arrivals: run.requests.len(),
        completions: done.len(),
        final_queue_depth: rows.last().map_or(0, |r| r.queue_depth),
        queue_slope: queue_growth_slope(&rows),
        e2e_ms_p50: percentile(&e2e, 50.0).ok(),
        e2e_ms_p99: percentile(&e2e, 99.0).ok(),
        ttft_ms_p50: percentile(&ttft, 50.0).ok(),
        tbt_ms_p50: percentile(&tbt, 50.0).ok(),
    })
}

/// Simulate each offered load for `duration_s` seconds on a constant-rate
/// trace. Points run in parallel; results keep the input order.
pub fn sweep(cfg: &RunConfig, rps: &[f64], duration_s: f64) -> Result<Vec<SweepPoint>> {
    if !(duration_s.is_finite() && duration_s >= 1.0) {
        return Err(Error::Validation(format!(
            "sweep duration must be at least 1 s, got {duration_s}"
        )));
    }
    cfg.validate()?;
    rps.par_iter()
        .enumerate()
        .map(|(i, &r)| run_point(cfg, r, duration_s, i))
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.5},{},{},{},{}",
            p.rps,
            p.arrivals,
            p.completions,
            p.final_queue_depth,
            p.queue_slope,
            opt(p.e2e_ms_p50),
            opt(p.e2e_ms_p99),
            opt(p.ttft_ms_p50),
            opt(p.tbt_ms_p50)
        );
    }
    out
}
