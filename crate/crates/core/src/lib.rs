//! Deterministic discrete-event simulator of an LLM serving node, with a
//! congestion controller that bounds the output length of queued requests
//! when time-between-tokens rises.
//!
//! The usual flow is: generate a [`Trace`], run it once without control,
//! calibrate thresholds from the per-second TBT series, run it again with a
//! [`LinearController`], and compare the two runs over a congestion window.

pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod sweep;
pub mod trace;
pub mod workload_models;

pub use config::RunConfig;
pub use controller::{
    calibrate_thresholds, reduction_rate, rewrite_request, CongestionController,
    ConstantController, ControllerConfig, LinearController, RewriteDecision, Thresholds,
};
pub use error::{Error, Result};
pub use metrics::{
    aggregate_per_second, compare_runs, percentile, RunComparison, RunRecord, SecondAggregate,
    Window,
};
pub use sim::{run_simulation, ControlPlane, RequestState, RunOptions, RunResult, ServerConfig};
pub use trace::{
    generate_trace, paper_trace, read_trace, write_trace, ArrivalEvent, Phase, PhaseSchedule,
    RequestClass, Trace, WorkloadProfile,
};
pub use workload_models::{
    bounded_target, predict_length, realized_length, similarity_score, ModelBundle,
};
