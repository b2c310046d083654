//! Output-length congestion control.
//!
//! Once per simulated second the serving loop reports the average
//! time-between-tokens (TBT). A [`CongestionController`] turns that signal
//! into a reduction rate `r`; requests leaving the queue while `r > 0` get a
//! predicted length `L`, a target `N = L·(1−r)` and an appended
//! "in exactly N words" instruction.
//!
//! [`LinearController`] is the shipped policy: a moving average over the last
//! few samples, `r = 0` below `t1`, then `r` rising linearly from `r_min` at
//! `t1` to `r_max` at `t2` and held there above it.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::percentile;
use crate::trace::{ArrivalEvent, RequestClass};
use crate::workload_models::{bounded_target, predict_length, PredictorModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassMode {
    Normal,
    /// Never rewritten (e.g. code generation, where truncation breaks output).
    Bypass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub window_s: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub t1_ms: Option<f64>,
    pub t2_ms: Option<f64>,
    /// Consecutive below-`t1` samples needed to switch off.
    pub deactivate_after: u32,
    pub class_policy: BTreeMap<RequestClass, ClassMode>,
    pub min_words_bypass: u32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            window_s: 5,
            r_min: 0.05,
            r_max: 0.20,
            t1_ms: None,
            t2_ms: None,
            deactivate_after: 1,
            class_policy: BTreeMap::from([(RequestClass::Coding, ClassMode::Bypass)]),
            min_words_bypass: 0,
        }
    }
}

impl ControllerConfig {
    pub fn with_thresholds(t1_ms: f64, t2_ms: f64) -> Self {
        ControllerConfig {
            t1_ms: Some(t1_ms),
            t2_ms: Some(t2_ms),
            ..Default::default()
        }
    }

    /// Thresholds, or a configuration error naming the missing keys.
    pub fn thresholds(&self) -> Result<Thresholds> {
        match (self.t1_ms, self.t2_ms) {
            (Some(t1_ms), Some(t2_ms)) => Ok(Thresholds { t1_ms, t2_ms }),
            (t1, t2) => {
                let missing: Vec<&str> = [("controller.t1_ms", t1), ("controller.t2_ms", t2)]
                    .into_iter()
                    .filter(|(_, v)| v.is_none())
                    .map(|(k, _)| k)
                    .collect();
                Err(Error::Validation(format!(
                    "bounded mode needs thresholds; missing {} (run `calibrate` on an unbounded run)",
                    missing.join(", ")
                )))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.r_min && self.r_min <= self.r_max && self.r_max < 1.0) {
            return Err(Error::Validation(format!(
                "controller: need 0 < r_min <= r_max < 1, got r_min={} r_max={}",
                self.r_min, self.r_max
            )));
        }
        if self.window_s < 1 || self.deactivate_after < 1 {
            return Err(Error::Validation(
                "controller: window_s and deactivate_after must be at least 1".into(),
            ));
        }
        if let (Some(t1), Some(t2)) = (self.t1_ms, self.t2_ms) {
            if !(t1.is_finite() && t2.is_finite() && t1 < t2) {
                return Err(Error::Validation(format!(
                    "controller: need t1_ms < t2_ms, got {t1} and {t2}"
                )));
            }
        }
        Ok(())
    }

    pub fn mode_for(&self, class: RequestClass) -> ClassMode {
        self.class_policy
            .get(&class)
            .copied()
            .unwrap_or(ClassMode::Normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub t1_ms: f64,
    pub t2_ms: f64,
}

/// Map a smoothed TBT to a reduction rate: 0 below `t1`, otherwise linear
/// between `r_min` (at `t1`) and `r_max` (at `t2`), clamped to that range.
pub fn reduction_rate(ma_tbt_ms: f64, th: Thresholds, r_min: f64, r_max: f64) -> f64 {
    if ma_tbt_ms.is_nan() || ma_tbt_ms < th.t1_ms {
        return 0.0;
    }
    if ma_tbt_ms >= th.t2_ms {
        return r_max;
    }
    // Weighted form keeps exact results on round inputs.
    let span = th.t2_ms - th.t1_ms;
    let r = (r_min * (th.t2_ms - ma_tbt_ms) + r_max * (ma_tbt_ms - th.t1_ms)) / span;
    r.clamp(r_min, r_max)
}

/// Trigger (median) and ceiling (75th percentile) thresholds from the
/// per-second TBT series of an unbounded run.
pub fn calibrate_thresholds(samples: &[f64]) -> Result<Thresholds> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: samples.len(),
        });
    }
    let t1_ms = percentile(samples, 50.0)?;
    let t2_ms = percentile(samples, 75.0)?;
    if t1_ms == t2_ms {
        return Err(Error::Degenerate { value: t1_ms });
    }
    Ok(Thresholds { t1_ms, t2_ms })
}

/// A logged controller transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub second: u64,
    pub active: bool,
}

/// One row of the controller log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSample {
    pub second: u64,
    pub ma_tbt_ms: f64,
    pub r: f64,
    pub active: bool,
}

/// Contract between the serving loop and any length-control policy.
///
/// Implementations must keep `current_r() == 0` exactly when inactive and
/// accept samples only in nondecreasing second order. Seconds without
/// generated tokens are skipped by the caller, not reported as zero.
pub trait CongestionController: Send {
    fn ingest_sample(&mut self, second: u64, avg_tbt_ms: f64) -> Result<ControlSample>;

    fn current_r(&self) -> f64;

    fn is_active(&self) -> bool {
        self.current_r() > 0.0
    }

    fn transitions(&self) -> &[Transition];

    fn name(&self) -> &'static str;
}

/// The moving-average linear policy.
#[derive(Debug, Clone)]
pub struct LinearController {
    thresholds: Thresholds,
    window_s: usize,
    r_min: f64,
    r_max: f64,
    deactivate_after: u32,
    window: VecDeque<f64>,
    current_r: f64,
    low_streak: u32,
    last_second: Option<u64>,
    transitions: Vec<Transition>,
}

impl LinearController {
    pub fn new(cfg: &ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        let thresholds = cfg.thresholds()?;
        Ok(LinearController {
            thresholds,
            window_s: cfg.window_s,
            r_min: cfg.r_min,
            r_max: cfg.r_max,
            deactivate_after: cfg.deactivate_after,
            window: VecDeque::with_capacity(cfg.window_s),
            current_r: 0.0,
            low_streak: 0,
            last_second: None,
            transitions: Vec::new(),
        })
    }

    /// Mean of the samples currently in the window (fewer than `window_s`
    /// at start-up).
    pub fn moving_average(&self) -> Option<f64> {
        if self.window.is_empty() {
            None
        } else {
            Some(self.window.iter().sum::<f64>() / self.window.len() as f64)
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }
}

impl CongestionController for LinearController {
    fn ingest_sample(&mut self, second: u64, avg_tbt_ms: f64) -> Result<ControlSample> {
        if let Some(last) = self.last_second {
            if second < last {
                return Err(Error::OutOfOrder { last, got: second });
            }
        }
        self.last_second = Some(second);
        if self.window.len() == self.window_s {
            self.window.pop_front();
        }
        self.window.push_back(avg_tbt_ms);
        let ma = self.moving_average().expect("window is non-empty");

        let r = reduction_rate(ma, self.thresholds, self.r_min, self.r_max);
        let was_active = self.current_r > 0.0;
        if r > 0.0 {
            self.low_streak = 0;
            self.current_r = r;
            if !was_active {
                self.transitions.push(Transition {
                    second,
                    active: true,
                });
            }
        } else if was_active {
            self.low_streak += 1;
            if self.low_streak >= self.deactivate_after {
                self.current_r = 0.0;
                self.low_streak = 0;
                self.transitions.push(Transition {
                    second,
                    active: false,
                });
            }
        }
        Ok(ControlSample {
            second,
            ma_tbt_ms: ma,
            r: self.current_r,
            active: self.current_r > 0.0,
        })
    }

    fn current_r(&self) -> f64 {
        self.current_r
    }

    fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    fn name(&self) -> &'static str {
        "linear"
    }
}

/// Applies a fixed `r` regardless of the signal. `r = 0` is the null
/// controller.
#[derive(Debug, Clone)]
pub struct ConstantController {
    r: f64,
    last_second: Option<u64>,
    window: VecDeque<f64>,
    transitions: Vec<Transition>,
}

impl ConstantController {
    pub fn new(r: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::Domain(format!("constant r {r} outside [0, 1)")));
        }
        Ok(ConstantController {
            r,
            last_second: None,
            window: VecDeque::new(),
            transitions: Vec::new(),
        })
    }
}

impl CongestionController for ConstantController {
    fn ingest_sample(&mut self, second: u64, avg_tbt_ms: f64) -> Result<ControlSample> {
        if let Some(last) = self.last_second {
            if second < last {
                return Err(Error::OutOfOrder { last, got: second });
            }
        } else if self.r > 0.0 {
            self.transitions.push(Transition {
                second,
                active: true,
            });
        }
        self.last_second = Some(second);
        if self.window.len() == 5 {
            self.window.pop_front();
        }
        self.window.push_back(avg_tbt_ms);
        Ok(ControlSample {
            second,
            ma_tbt_ms: self.window.iter().sum::<f64>() / self.window.len() as f64,
            r: self.r,
            active: self.r > 0.0,
        })
    }

    fn current_r(&self) -> f64 {
        self.r
    }

    fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    fn name(&self) -> &'static str {
        "constant"
    }
}

/// Length bound attached to a request when it leaves the queue.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteDecision {
    pub predicted_len: Option<u32>,
    pub r_applied: f64,
    pub target_n: Option<u32>,
    pub appended_instruction: Option<String>,
}

impl RewriteDecision {
    pub fn untouched() -> Self {
        RewriteDecision {
            predicted_len: None,
            r_applied: 0.0,
            target_n: None,
            appended_instruction: None,
        }
    }

    pub fn is_rewritten(&self) -> bool {
        self.r_applied > 0.0
    }
}

pub fn instruction_for(n: u32) -> String {
    format!("Summarize in exactly {n} words.")
}

/// Decide how to rewrite `event` given the controller's current `r`.
///
/// Every request rewritten between two control ticks sees the same `r`,
/// because `r` only changes when a sample is ingested.
pub fn rewrite_request<R: Rng>(
    event: &ArrivalEvent,
    current_r: f64,
    predictor: &PredictorModel,
    cfg: &ControllerConfig,
    rng: &mut R,
) -> RewriteDecision {
    if current_r <= 0.0 || cfg.mode_for(event.class) == ClassMode::Bypass {
        return RewriteDecision::untouched();
    }
    let predicted = predict_length(event.unbounded_output_words, predictor, rng);
    if predicted < cfg.min_words_bypass {
        return RewriteDecision {
            predicted_len: Some(predicted),
            ..RewriteDecision::untouched()
        };
    }
    let n = bounded_target(predicted, current_r).expect("controller r is in [0, 1)");
    RewriteDecision {
        predicted_len: Some(predicted),
        r_applied: current_r,
        target_n: Some(n),
        appended_instruction: Some(instruction_for(n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;

    const TH: Thresholds = Thresholds {
        t1_ms: 50.0,
        t2_ms: 100.0,
    };

    fn linear(t1: f64, t2: f64) -> LinearController {
        LinearController::new(&ControllerConfig::with_thresholds(t1, t2)).unwrap()
    }

    #[test]
    fn reduction_rate_examples() {
        assert_eq!(reduction_rate(40.0, TH, 0.05, 0.20), 0.0);
        assert_eq!(reduction_rate(50.0, TH, 0.05, 0.20), 0.05);
        assert_eq!(reduction_rate(75.0, TH, 0.05, 0.20), 0.125);
        assert_eq!(reduction_rate(100.0, TH, 0.05, 0.20), 0.20);
        assert_eq!(reduction_rate(180.0, TH, 0.05, 0.20), 0.20);
    }

    #[test]
    fn calibrate_examples() {
        let s: Vec<f64> = (1..=11).map(|i| f64::from(i) * 10.0).collect();
        let th = calibrate_thresholds(&s).unwrap();
        assert_eq!((th.t1_ms, th.t2_ms), (60.0, 90.0));
        assert!(matches!(
            calibrate_thresholds(&[5.0; 4]),
            Err(Error::Degenerate { .. })
        ));
        assert!(matches!(
            calibrate_thresholds(&[1.0, 2.0, 3.0]),
            Err(Error::InsufficientData { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn moving_average_over_window() {
        let mut c = linear(1000.0, 2000.0);
        for (s, v) in [10.0, 10.0, 10.0, 50.0, 50.0].into_iter().enumerate() {
            c.ingest_sample(s as u64, v).unwrap();
        }
        assert_eq!(c.moving_average(), Some(26.0));
        c.ingest_sample(5, 60.0).unwrap();
        assert_eq!(c.moving_average(), Some(36.0));
    }

    #[test]
    fn partial_window_averages_what_it_has() {
        let mut c = linear(1000.0, 2000.0);
        let s = c.ingest_sample(0, 40.0).unwrap();
        assert_eq!(s.ma_tbt_ms, 40.0);
    }

    #[test]
    fn sustained_t1_activates_at_r_min() {
        let mut c = linear(50.0, 100.0);
        for s in 0..5 {
            c.ingest_sample(s, 50.0).unwrap();
        }
        assert!(c.is_active());
        assert_eq!(c.current_r(), 0.05);
        assert_eq!(
            c.transitions(),
            &[Transition {
                second: 0,
                active: true
            }]
        );
    }

    #[test]
    fn deactivates_on_first_low_average() {
        let mut c = linear(50.0, 100.0);
        c.ingest_sample(0, 80.0).unwrap();
        assert!(c.is_active());
        c.ingest_sample(1, 10.0).unwrap(); // average 45 < t1
        assert!(!c.is_active());
        assert_eq!(c.current_r(), 0.0);
        assert_eq!(c.transitions().len(), 2);
    }

    #[test]
    fn deactivation_streak_is_configurable() {
        let cfg = ControllerConfig {
            deactivate_after: 2,
            window_s: 1,
            ..ControllerConfig::with_thresholds(50.0, 100.0)
        };
        let mut c = LinearController::new(&cfg).unwrap();
        c.ingest_sample(0, 75.0).unwrap();
        c.ingest_sample(1, 10.0).unwrap();
        assert_eq!(c.current_r(), 0.125);
        c.ingest_sample(2, 10.0).unwrap();
        assert_eq!(c.current_r(), 0.0);
    }

    #[test]
    fn out_of_order_samples_are_rejected() {
        let mut c = linear(50.0, 100.0);
        c.ingest_sample(5, 10.0).unwrap();
        c.ingest_sample(5, 10.0).unwrap();
        assert!(matches!(
            c.ingest_sample(4, 10.0),
            Err(Error::OutOfOrder { last: 5, got: 4 })
        ));
    }

    #[test]
    fn missing_thresholds_name_keys() {
        let err = LinearController::new(&ControllerConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("controller.t1_ms") && msg.contains("controller.t2_ms"),
            "{msg}"
        );
    }

    fn event(class: RequestClass, len: u32) -> ArrivalEvent {
        ArrivalEvent {
            request_id: 1,
            arrival_ms: 0,
            input_words: 9000,
            unbounded_output_words: len,
            class,
        }
    }

    #[test]
    fn rewrite_examples() {
        let exact = PredictorModel {
            noise_scale: 0.0,
            ..Default::default()
        };
        let cfg = ControllerConfig::default();
        let mut rng = substream(0, Stream::Predictor, 0);
        let e = event(RequestClass::Summarization, 500);

        let d = rewrite_request(&e, 0.0, &exact, &cfg, &mut rng);
        assert_eq!(d, RewriteDecision::untouched());

        let d = rewrite_request(&e, 0.08, &exact, &cfg, &mut rng);
        assert_eq!(d.predicted_len, Some(500));
        assert_eq!(d.target_n, Some(460));
        assert_eq!(d.r_applied, 0.08);
        assert_eq!(
            d.appended_instruction.as_deref(),
            Some("Summarize in exactly 460 words.")
        );

        let d = rewrite_request(
            &event(RequestClass::Coding, 500),
            0.08,
            &exact,
            &cfg,
            &mut rng,
        );
        assert_eq!(d.r_applied, 0.0);
        assert!(d.appended_instruction.is_none());

        let short = ControllerConfig {
            min_words_bypass: 100,
            ..Default::default()
        };
        let d = rewrite_request(
            &event(RequestClass::Summarization, 40),
            0.2,
            &exact,
            &short,
            &mut rng,
        );
        assert!(!d.is_rewritten());
        assert!(d.appended_instruction.is_none());
    }

    proptest! {
        #[test]
        fn reduction_rate_is_monotone_and_in_range(
            t1 in 1f64..500.0,
            gap in 0.5f64..500.0,
            a in 0f64..2000.0,
            b in 0f64..2000.0,
        ) {
            let th = Thresholds { t1_ms: t1, t2_ms: t1 + gap };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (rl, rh) = (reduction_rate(lo, th, 0.05, 0.2), reduction_rate(hi, th, 0.05, 0.2));
            prop_assert!(rl <= rh);
            for r in [rl, rh] {
                prop_assert!(r == 0.0 || (0.05..=0.2).contains(&r));
            }
        }

        #[test]
        fn state_invariant_holds(samples in proptest::collection::vec(0f64..300.0, 1..60)) {
            let mut c = linear(50.0, 100.0);
            for (s, v) in samples.iter().enumerate() {
                let out = c.ingest_sample(s as u64, *v).unwrap();
                prop_assert_eq!(out.active, out.r > 0.0);
                prop_assert!(out.r == 0.0 || (0.05..=0.2).contains(&out.r));
                if out.ma_tbt_ms < 50.0 {
                    prop_assert!(!out.active);
                }
            }
        }
    }
}
