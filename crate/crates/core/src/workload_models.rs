//! Parametric stand-ins for LLM behaviour: the output-length predictor,
//! word-limit compliance, run-to-run length variability and the similarity
//! of a shortened answer to the unbounded one.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noisy oracle for the unbounded output length. Errors are Laplace
/// distributed, whose mean absolute deviation equals the scale parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorModel {
    /// Laplace scale `b` in words; the expected absolute error.
    pub noise_scale: f64,
    pub min_output: u32,
    pub latency_ms: f64,
}

impl Default for PredictorModel {
    fn default() -> Self {
        PredictorModel {
            noise_scale: 36.0,
            min_output: 1,
            latency_ms: 50.0,
        }
    }
}

impl PredictorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.latency_ms >= 0.0) || self.min_output < 1 {
            return Err(Error::Validation(
                "predictor: need noise_scale >= 0, latency_ms >= 0, min_output >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// How closely the model follows "in exactly N words", plus the spread of
/// unbounded generations around their median length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplianceModel {
    pub poly_a0: f64,
    pub poly_a1: f64,
    pub poly_a2: f64,
    /// Relative standard deviation of the realized length around the curve.
    pub rel_noise: f64,
    /// Log-space standard deviation of unbounded generations.
    pub unbounded_log_sigma: f64,
    /// Unbounded generations are clipped to `[min, max] × median`.
    pub unbounded_min_factor: f64,
    pub unbounded_max_factor: f64,
}

impl Default for ComplianceModel {
    fn default() -> Self {
        ComplianceModel {
            poly_a0: 0.0,
            poly_a1: 1.0,
            poly_a2: 0.0,
            rel_noise: 0.05,
            // ln(0.75) / z(0.9995): the short edge of the band sits at the
            // 0.05% quantile.
            unbounded_log_sigma: 0.0874,
            unbounded_min_factor: 0.75,
            unbounded_max_factor: 1.38,
        }
    }
}

impl ComplianceModel {
    pub fn identity() -> Self {
        ComplianceModel {
            rel_noise: 0.0,
            ..ComplianceModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_noise >= 0.0
            && self.unbounded_log_sigma >= 0.0
            && self.unbounded_min_factor > 0.0
            && self.unbounded_min_factor <= 1.0
            && self.unbounded_max_factor >= 1.0
            && [self.poly_a0, self.poly_a1, self.poly_a2]
                .iter()
                .all(|c| c.is_finite());
        if !ok {
            return Err(Error::Validation(
                "compliance: need finite coefficients, non-negative noise and \
                 0 < unbounded_min_factor <= 1 <= unbounded_max_factor"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityModel {
    pub sim_inactive_median: f64,
    pub sim_active_median: f64,
    pub floor: f64,
    /// Largest reduction that keeps the active median score.
    pub safe_window: f64,
    /// Reduction at which the score has decayed to `floor`.
    pub decay_end: f64,
    pub score_noise: f64,
}

impl Default for QualityModel {
    fn default() -> Self {
        QualityModel {
            sim_inactive_median: 88.0,
            sim_active_median: 87.0,
            floor: 65.0,
            safe_window: 0.20,
            decay_end: 0.40,
            score_noise: 2.0,
        }
    }
}

impl QualityModel {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.floor
            && self.floor <= self.sim_active_median
            && self.sim_active_median <= self.sim_inactive_median
            && self.sim_inactive_median <= 100.0
            && 0.0 < self.safe_window
            && self.safe_window < self.decay_end
            && self.decay_end <= 1.0
            && self.score_noise >= 0.0;
        if !ok {
            return Err(Error::Validation(
                "quality: need 0 <= floor <= active <= inactive <= 100 and \
                 0 < safe_window < decay_end <= 1"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// All behavioural models consumed by a simulation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBundle {
    pub predictor: PredictorModel,
    pub compliance: ComplianceModel,
    pub quality: QualityModel,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        self.compliance.validate()?;
        self.quality.validate()
    }
}

fn laplace<R: Rng>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    // Inverse CDF on u in (-1/2, 1/2).
    let u: f64 = rng.random::<f64>() - 0.5;
    let tail = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    -scale * u.signum() * tail.ln()
}

fn gaussian<R: Rng>(sd: f64, rng: &mut R) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("validated sd").sample(rng)
}

fn clamp_words(x: f64) -> u32 {
    if x.is_nan() {
        return 1;
    }
    x.round().clamp(1.0, u32::MAX as f64) as u32
}

/// Predicted unbounded length for a request whose true length is `true_len`.
pub fn predict_length<R: Rng>(true_len: u32, model: &PredictorModel, rng: &mut R) -> u32 {
    let noisy = (f64::from(true_len) + laplace(model.noise_scale, rng)).round();
    clamp_words(noisy).max(model.min_output)
}

/// `N = round(L · (1 − r))`, at least one word.
pub fn bounded_target(len: u32, r: f64) -> Result<u32> {
    if len == 0 {
        return Err(Error::Domain("length must be at least 1 word".into()));
    }
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Domain(format!("reduction rate {r} outside [0, 1)")));
    }
    Ok(clamp_words(f64::from(len) * (1.0 - r)))
}

/// Length the model actually produces. With a target it follows the
/// compliance curve; without one it varies around `unbounded_len`.
pub fn realized_length<R: Rng>(
    target: Option<u32>,
    unbounded_len: u32,
    model: &ComplianceModel,
    rng: &mut R,
) -> u32 {
    match target {
        Some(n) => {
            let n = f64::from(n);
            let curve = model.poly_a0 + model.poly_a1 * n + model.poly_a2 * n * n;
            clamp_words(curve * (1.0 + gaussian(model.rel_noise, rng)))
        }
        None => {
            let lo = model.unbounded_min_factor.ln();
            let hi = model.unbounded_max_factor.ln();
            let g = gaussian(model.unbounded_log_sigma, rng).clamp(lo, hi);
            clamp_words(f64::from(unbounded_len) * g.exp())
        }
    }
}

/// Noise-free similarity for a given reduction.
pub fn similarity_base(reduction: f64, control_active: bool, model: &QualityModel) -> f64 {
    if !control_active {
        return model.sim_inactive_median;
    }
    if reduction.is_nan() || reduction <= model.safe_window {
        return model.sim_active_median;
    }
    if reduction >= model.decay_end {
        return model.floor;
    }
    let frac = (reduction - model.safe_window) / (model.decay_end - model.safe_window);
    model.sim_active_median - (model.sim_active_median - model.floor) * frac
}

/// Similarity score (0–100) of a response shortened by `reduction` relative
/// to its unbounded counterpart. Negative reductions mean a longer answer.
pub fn similarity_score<R: Rng>(
    reduction: f64,
    control_active: bool,
    model: &QualityModel,
    rng: &mut R,
) -> f64 {
    let base = similarity_base(reduction, control_active, model);
    (base + gaussian(model.score_noise, rng)).clamp(0.0, 100.0)
}
