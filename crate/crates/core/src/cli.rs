//! Command-line surface: trace generation, runs, calibration, comparison,
//! and load sweeps. Every command writes fixed file names so later commands
//! only need directories.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::controller::{calibrate_thresholds, LinearController};
use crate::error::{Error, Result};
use crate::metrics::{
    compare_runs, comparison_text, controller_log_csv, default_window, parse_per_second,
    per_second_csv, requests_csv, side_by_side_csv, summary_text, RunRecord, Window,
};
use crate::sim::{run_simulation, ControlPlane, RunOptions};
use crate::sweep::{parse_range, rps_values, sweep, sweep_csv};
use crate::trace::{generate_trace, paper_trace, read_trace, write_trace, PhaseSchedule};

pub const TRACE_FILE: &str = "trace.csv";
pub const PER_SECOND_FILE: &str = "per_second.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONTROLLER_LOG_FILE: &str = "controller_log.csv";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";
pub const REQUESTS_FILE: &str = "requests.csv";
pub const THRESHOLDS_FILE: &str = "thresholds.toml";
pub const COMPARISON_FILE: &str = "comparison.txt";
pub const SIDE_BY_SIDE_FILE: &str = "side_by_side.csv";

/// Queue depth that marks the unbounded run as congested when deriving the
/// default comparison window.
pub const CONGESTED_QUEUE_DEPTH: u64 = 10;

#[derive(Debug, Parser)]
#[command(
    name = "llmcc",
    version,
    about = "LLM serving simulator with output-length congestion control"
)]
pub struct Cli {
    /// Config file(s); later files override earlier ones. Defaults to
    /// $LLMCC_CONFIG when omitted.
    #[arg(long = "config", global = true)]
    pub config: Vec<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Recipe {
    /// Two-peak 22-minute schedule.
    Paper,
    /// Schedule from --schedule or `run.schedule`.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Unbounded,
    Bounded,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Unbounded => "unbounded",
            Mode::Bounded => "bounded",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an arrival trace.
    GenTrace {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Recipe::Paper)]
        recipe: Recipe,
        /// Phases as `seconds:rate` or `seconds:from-to`, comma separated.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate a trace and write metrics into a directory.
    Run {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Unbounded)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        t1_ms: Option<f64>,
        #[arg(long)]
        t2_ms: Option<f64>,
        /// Stop after this many simulated seconds.
        #[arg(long)]
        cutoff_s: Option<f64>,
    },
    /// Derive controller thresholds from an unbounded run directory.
    Calibrate {
        #[arg(long)]
        unbounded_run: PathBuf,
        /// Where to write the config fragment (default: <run>/thresholds.toml).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare an unbounded and a bounded run of the same trace.
    Compare {
        #[arg(long)]
        unbounded: PathBuf,
        #[arg(long)]
        bounded: PathBuf,
        /// `start:end` seconds, `preset` for 130:500; default spans from
        /// controller activation to the end of unbounded congestion.
        #[arg(long)]
        window: Option<String>,
        /// Report directory (default: the bounded run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run constant-load simulations over a range of offered loads.
    Sweep {
        /// Offered-load range `a..b` in requests per second.
        #[arg(long)]
        rps: String,
        #[arg(long, default_value_t = 0.2)]
        step: f64,
        /// Seconds simulated per point.
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
        ))
    }
}

/// Execute a parsed command, writing human-readable output to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    let print = |out: &mut dyn Write, s: &str| -> Result<()> {
        out.write_all(s.as_bytes())
            .map_err(|e| Error::io(Path::new("<stdout>"), e))
    };
    match cli.command {
        Command::GenTrace {
            out,
            recipe,
            schedule,
            seed,
        } => {
            let seed = seed.unwrap_or(cfg.run.seed);
            let trace = match recipe {
                Recipe::Paper => paper_trace(&cfg.workload, seed)?,
                Recipe::Custom => {
                    let text = schedule.or(cfg.run.schedule.clone()).ok_or_else(|| {
                        Error::Validation(
                            "--recipe custom needs --schedule or run.schedule in the config".into(),
                        )
                    })?;
                    generate_trace(&text.parse::<PhaseSchedule>()?, &cfg.workload, seed)?
                }
            };
            write_trace(&trace, &out)?;
            print(
                stdout,
                &format!(
                    "wrote {} events over {} s to {}\n",
                    trace.events.len(),
                    trace.duration_ms as f64 / 1000.0,
                    out.display()
                ),
            )
        }
        Command::Run {
            trace,
            mode,
            out,
            seed,
            t1_ms,
            t2_ms,
            cutoff_s,
        } => {
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if t1_ms.is_some() {
                cfg.controller.t1_ms = t1_ms;
            }
            if t2_ms.is_some() {
                cfg.controller.t2_ms = t2_ms;
            }
            if cutoff_s.is_some() {
                cfg.run.cutoff_s = cutoff_s;
            }
            cfg.validate()?;
            let trace = read_trace(&trace)?;
            let mut controller = match mode {
                Mode::Bounded => Some(LinearController::new(&cfg.controller)?),
                Mode::Unbounded => None,
            };
            let control = controller.as_mut().map(|c| ControlPlane {
                controller: c,
                policy: &cfg.controller,
            });
            let run = run_simulation(
                &trace,
                &cfg.server,
                &cfg.models,
                control,
                cfg.run.seed,
                &RunOptions {
                    cutoff_s: cfg.run.cutoff_s,
                },
            )?;
            let record = RunRecord::from_run(&run);
            create_dir(&out)?;
            write_trace(&trace, &out.join(TRACE_FILE))?;
            write_file(
                &out.join(PER_SECOND_FILE),
                &per_second_csv(&record.per_second),
            )?;
            let summary = summary_text(&run, &record, mode.as_str());
            write_file(&out.join(SUMMARY_FILE), &summary)?;
            write_file(&out.join(REQUESTS_FILE), &requests_csv(&record))?;
            write_file(&out.join(EFFECTIVE_CONFIG_FILE), &cfg.to_toml_string())?;
            if mode == Mode::Bounded {
                write_file(&out.join(CONTROLLER_LOG_FILE), &controller_log_csv(&run))?;
            }
            print(stdout, &summary)
        }
        Command::Calibrate { unbounded_run, out } => {
            require_dir(&unbounded_run)?;
            let rows = parse_per_second(&unbounded_run.join(PER_SECOND_FILE))?;
            let tbt: Vec<f64> = rows.iter().filter_map(|r| r.avg_tbt_ms).collect();
            let th = calibrate_thresholds(&tbt)?;
            let fragment = format!(
                "[controller]\nt1_ms = {:?}\nt2_ms = {:?}\n",
                th.t1_ms, th.t2_ms
            );
            let out = out.unwrap_or_else(|| unbounded_run.join(THRESHOLDS_FILE));
            write_file(&out, &fragment)?;
            print(
                stdout,
                &format!(
                    "t1_ms={} t2_ms={}\nwrote {}\n",
                    th.t1_ms,
                    th.t2_ms,
                    out.display()
                ),
            )
        }
        Command::Compare {
            unbounded,
            bounded,
            window,
            out,
        } => {
            require_dir(&unbounded)?;
            require_dir(&bounded)?;
            let u = RunRecord::load_dir(&unbounded)?;
            let b = RunRecord::load_dir(&bounded)?;
            let window = match window.as_deref() {
                Some("preset") => Window::PRESET,
                Some(w) => w.parse()?,
                None => default_window(&u, &b, CONGESTED_QUEUE_DEPTH)?,
            };
            let cmp = compare_runs(&u, &b, window, &cfg.models.quality)?;
            let report = comparison_text(&cmp);
            let out = out.unwrap_or(bounded);
            create_dir(&out)?;
            write_file(&out.join(COMPARISON_FILE), &report)?;
            write_file(
                &out.join(SIDE_BY_SIDE_FILE),
                &side_by_side_csv(&u.per_second, &b.per_second),
            )?;
            print(stdout, &report)
        }
        Command::Sweep {
            rps,
            step,
            duration,
            out,
        } => {
            let (a, b) = parse_range(&rps)?;
            let points = sweep(&cfg, &rps_values(a, b, step)?, duration)?;
            let csv = sweep_csv(&points);
            if let Some(path) = out {
                write_file(&path, &csv)?;
            }
            let mut table = String::new();
            let _ = writeln!(
                table,
                "{:>6} {:>9} {:>11} {:>12} {:>12}",
                "rps", "arrivals", "end_queue", "slope_req/s", "e2e_p50_ms"
            );
            for p in &points {
                let _ = writeln!(
                    table,
                    "{:>6.2} {:>9} {:>11} {:>12.4} {:>12}",
                    p.rps,
                    p.arrivals,
                    p.final_queue_depth,
                    p.queue_slope,
                    p.e2e_ms_p50
                        .map_or_else(|| "-".into(), |v| format!("{v:.0}"))
                );
            }
            print(stdout, &table)
        }
    }
}
