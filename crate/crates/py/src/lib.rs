//! Python bindings: trace generation, simulation runs, the linear
//! controller and the control-law helpers.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: llmcc::Error) -> PyErr {
    match e {
        llmcc::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pymodule]
mod llmcc_py {
    use std::path::Path;

    use llmcc::metrics::{per_second_csv, summary_text, RunRecord, Window};
    use llmcc::{CongestionController, ControllerConfig, RunConfig, Thresholds};
    use pyo3::prelude::*;

    use super::to_py;

    fn load_config(config_toml: Option<&str>) -> PyResult<RunConfig> {
        match config_toml {
            Some(text) => RunConfig::from_toml_str(text, Path::new("<python>")).map_err(to_py),
            None => Ok(RunConfig::default()),
        }
    }

    #[pyclass(frozen)]
    struct Trace {
        inner: llmcc::Trace,
    }

    #[pymethods]
    impl Trace {
        #[staticmethod]
        fn from_csv(text: &str) -> PyResult<Self> {
            let inner = llmcc::Trace::from_csv_str(text, Path::new("<python>")).map_err(to_py)?;
            Ok(Trace { inner })
        }

        fn to_csv(&self) -> String {
            self.inner.to_csv_string()
        }

        #[getter]
        fn duration_ms(&self) -> u64 {
            self.inner.duration_ms
        }

        #[getter]
        fn fingerprint(&self) -> u64 {
            self.inner.fingerprint()
        }

        /// `(request_id, arrival_ms, input_words, unbounded_output_words, class)`
        fn events(&self) -> Vec<(u64, u64, u32, u32, &'static str)> {
            self.inner
                .events
                .iter()
                .map(|e| {
                    (
                        e.request_id,
                        e.arrival_ms,
                        e.input_words,
                        e.unbounded_output_words,
                        e.class.as_str(),
                    )
                })
                .collect()
        }

        fn __len__(&self) -> usize {
            self.inner.events.len()
        }
    }

    /// Generate a trace from a schedule string such as `"60:0-2.5,90:2.5"`,
    /// or the two-peak default when `schedule` is omitted.
    #[pyfunction]
    #[pyo3(signature = (seed, schedule=None, config_toml=None))]
    fn generate_trace(
        seed: u64,
        schedule: Option<&str>,
        config_toml: Option<&str>,
    ) -> PyResult<Trace> {
        let cfg = load_config(config_toml)?;
        let inner = match schedule {
            Some(s) => llmcc::generate_trace(&s.parse().map_err(to_py)?, &cfg.workload, seed),
            None => llmcc::paper_trace(&cfg.workload, seed),
        }
        .map_err(to_py)?;
        Ok(Trace { inner })
    }

    #[pyclass(frozen)]
    struct Run {
        record: RunRecord,
        summary: String,
        total_energy_j: f64,
        truncated: bool,
    }

    #[pymethods]
    impl Run {
        #[getter]
        fn total_energy_j(&self) -> f64 {
            self.total_energy_j
        }

        #[getter]
        fn horizon_s(&self) -> u64 {
            self.record.horizon_s
        }

        #[getter]
        fn truncated(&self) -> bool {
            self.truncated
        }

        #[getter]
        fn activation_s(&self) -> Option<u64> {
            self.record.activation_s
        }

        #[getter]
        fn deactivation_s(&self) -> Option<u64> {
            self.record.deactivation_s
        }

        #[getter]
        fn completions(&self) -> usize {
            self.record
                .requests
                .iter()
                .filter(|r| r.completion_ms.is_some())
                .count()
        }

        /// Per-second average TBT in ms (`None` for seconds without tokens).
        fn tbt_series(&self) -> Vec<Option<f64>> {
            self.record
                .per_second
                .iter()
                .map(|s| s.avg_tbt_ms)
                .collect()
        }

        fn queue_depth_series(&self) -> Vec<u64> {
            self.record
                .per_second
                .iter()
                .map(|s| s.queue_depth)
                .collect()
        }

        fn per_second_csv(&self) -> String {
            per_second_csv(&self.record.per_second)
        }

        fn summary(&self) -> String {
            self.summary.clone()
        }

        /// Compare `self` (unbounded) with `bounded` over `[start_s, end_s)`.
        /// Returns a dict of the report fields.
        fn compare<'py>(
            &self,
            py: Python<'py>,
            bounded: &Run,
            start_s: u64,
            end_s: u64,
        ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
            let window = Window::new(start_s, end_s).map_err(to_py)?;
            let quality = llmcc::workload_models::QualityModel::default();
            let c = llmcc::compare_runs(&self.record, &bounded.record, window, &quality)
                .map_err(to_py)?;
            let d = pyo3::types::PyDict::new(py);
            d.set_item("e2e_peak_ratio", c.e2e_peak_ratio)?;
            d.set_item("completions_unbounded", c.completions_unbounded)?;
            d.set_item("completions_bounded", c.completions_bounded)?;
            d.set_item("completions_delta_pct", c.completions_delta_pct)?;
            d.set_item("energy_unbounded_j", c.energy_unbounded_j)?;
            d.set_item("energy_bounded_j", c.energy_bounded_j)?;
            d.set_item("energy_delta_pct", c.energy_delta_pct)?;
            d.set_item("rewritten_requests", c.rewritten_requests)?;
            d.set_item("median_r_active", c.median_r_active)?;
            d.set_item("similarity_median_active", c.similarity_median_active)?;
            d.set_item("similarity_median_inactive", c.similarity_median_inactive)?;
            Ok(d)
        }
    }

    /// Simulate `trace`. With both thresholds the linear controller is
    /// attached (bounded run); without them the run is unbounded.
    #[pyfunction]
    #[pyo3(signature = (trace, seed=42, t1_ms=None, t2_ms=None, config_toml=None))]
    fn simulate(
        py: Python<'_>,
        trace: &Trace,
        seed: u64,
        t1_ms: Option<f64>,
        t2_ms: Option<f64>,
        config_toml: Option<&str>,
    ) -> PyResult<Run> {
        let mut cfg = load_config(config_toml)?;
        let bounded = t1_ms.is_some() || t2_ms.is_some();
        cfg.controller.t1_ms = t1_ms.or(cfg.controller.t1_ms);
        cfg.controller.t2_ms = t2_ms.or(cfg.controller.t2_ms);
        let run = py
            .detach(|| {
                let mut controller = if bounded {
                    Some(llmcc::LinearController::new(&cfg.controller)?)
                } else {
                    None
                };
                let control = controller.as_mut().map(|c| llmcc::ControlPlane {
                    controller: c,
                    policy: &cfg.controller,
                });
                llmcc::run_simulation(
                    &trace.inner,
                    &cfg.server,
                    &cfg.models,
                    control,
                    seed,
                    &llmcc::RunOptions {
                        cutoff_s: cfg.run.cutoff_s,
                    },
                )
            })
            .map_err(to_py)?;
        let record = RunRecord::from_run(&run);
        let mode = if bounded { "bounded" } else { "unbounded" };
        Ok(Run {
            summary: summary_text(&run, &record, mode),
            total_energy_j: run.total_energy_j(),
            truncated: run.truncated,
            record,
        })
    }

    #[pyclass]
    struct LinearController {
        inner: llmcc::LinearController,
    }

    #[pymethods]
    impl LinearController {
        #[new]
        #[pyo3(signature = (t1_ms, t2_ms, window_s=5, r_min=0.05, r_max=0.20))]
        fn new(t1_ms: f64, t2_ms: f64, window_s: usize, r_min: f64, r_max: f64) -> PyResult<Self> {
            let cfg = ControllerConfig {
                window_s,
                r_min,
                r_max,
                ..ControllerConfig::with_thresholds(t1_ms, t2_ms)
            };
            let inner = llmcc::LinearController::new(&cfg).map_err(to_py)?;
            Ok(LinearController { inner })
        }

        /// Feed one per-second average TBT; returns the new `r`.
        fn ingest(&mut self, second: u64, avg_tbt_ms: f64) -> PyResult<f64> {
            Ok(self
                .inner
                .ingest_sample(second, avg_tbt_ms)
                .map_err(to_py)?
                .r)
        }

        #[getter]
        fn current_r(&self) -> f64 {
            self.inner.current_r()
        }

        #[getter]
        fn active(&self) -> bool {
            self.inner.is_active()
        }

        #[getter]
        fn moving_average(&self) -> Option<f64> {
            self.inner.moving_average()
        }
    }

    #[pyfunction]
    fn percentile(samples: Vec<f64>, p: f64) -> PyResult<f64> {
        llmcc::percentile(&samples, p).map_err(to_py)
    }

    #[pyfunction]
    #[pyo3(signature = (ma_tbt_ms, t1_ms, t2_ms, r_min=0.05, r_max=0.20))]
    fn reduction_rate(ma_tbt_ms: f64, t1_ms: f64, t2_ms: f64, r_min: f64, r_max: f64) -> f64 {
        llmcc::reduction_rate(ma_tbt_ms, Thresholds { t1_ms, t2_ms }, r_min, r_max)
    }

    #[pyfunction]
    fn bounded_target(length: u32, r: f64) -> PyResult<u32> {
        llmcc::bounded_target(length, r).map_err(to_py)
    }

    /// `(t1_ms, t2_ms)` from an unbounded run's per-second TBT series.
    #[pyfunction]
    fn calibrate_thresholds(samples: Vec<f64>) -> PyResult<(f64, f64)> {
        let th = llmcc::calibrate_thresholds(&samples).map_err(to_py)?;
        Ok((th.t1_ms, th.t2_ms))
    }
}
