//! Noise-injected training signals.
//!
//! An image is distorted by the forward diffusion chain
//! `v_t = √(1−γ)·v_{t−1} + √γ·ε_t`. A teacher-forced model is scored on the
//! gold answer twice, once with the clean image and once with the distorted
//! one; the per-token gold logit difference measures how much each token
//! depends on the visual input. Those raw weights are smoothed and normalised
//! and used to reweight the token-level negative log-likelihood.
//!
//! Nothing here updates model parameters; the quantities are computed for
//! inspection and for export to a trainer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backend::{TeacherForcedRequest, TeacherForcedResponse, TeacherForcedScorer};
use crate::error::{BackendError, Error, Result};
use crate::par::bounded_map;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    gamma: f64,
    steps: u32,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            steps: 10,
        }
    }
}

impl NoiseSchedule {
    /// `gamma` must lie in `(0, 1]` unless `steps == 0`.
    pub fn new(gamma: f64, steps: u32) -> Result<Self> {
        if steps > 0 && !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!(
                "noise amount {gamma} outside (0, 1]"
            )));
        }
        Ok(Self { gamma, steps })
    }

    /// Skips validation, for probing edge cases such as `gamma = 0`.
    pub fn unchecked(gamma: f64, steps: u32) -> Self {
        Self { gamma, steps }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// `((1−γ)^{T/2}, √(1 − (1−γ)^T))`: signal scale and noise standard deviation after `T` steps.
    pub fn coefficients(&self) -> (f64, f64) {
        let keep = 1.0 - self.gamma;
        let t = self.steps as i32;
        let signal = if t % 2 == 0 {
            keep.powi(t / 2)
        } else {
            keep.sqrt() * keep.powi(t / 2)
        };
        let noise_var = 1.0 - keep.powi(t);
        (signal, noise_var.max(0.0).sqrt())
    }
}

fn check_finite(v0: &ImageTensor) -> Result<()> {
    if v0.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image tensor".into()));
    }
    Ok(())
}

/// Closed-form distortion `v_T = (1−γ)^{T/2}·v_0 + √(1−(1−γ)^T)·ε` with one
/// seeded normal draw per element. `T = 0` returns `v0` unchanged.
pub fn distort_image(v0: &ImageTensor, schedule: NoiseSchedule, seed: u64) -> Result<ImageTensor> {
    check_finite(v0)?;
    if schedule.steps == 0 {
        return Ok(v0.clone());
    }
    let (signal, noise) = schedule.coefficients();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = v0
        .data()
        .iter()
        .map(|&x| {
            let eps: f64 = rng.sample(StandardNormal);
            (signal * f64::from(x) + noise * eps) as f32
        })
        .collect();
    Ok(v0.with_data(data))
}

/// The literal `T`-step chain, drawing fresh noise at every step.
pub fn stepwise_distort(
    v0: &ImageTensor,
    schedule: NoiseSchedule,
    seed: u64,
) -> Result<ImageTensor> {
    check_finite(v0)?;
    let (signal, noise) = NoiseSchedule::unchecked(schedule.gamma, 1).coefficients();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = v0.data().iter().map(|&x| f64::from(x)).collect();
    for _ in 0..schedule.steps {
        for x in &mut v {
            let eps: f64 = rng.sample(StandardNormal);
            *x = signal * *x + noise * eps;
        }
    }
    Ok(v0.with_data(v.into_iter().map(|x| x as f32).collect()))
}

fn check_logits(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name.into()));
    }
    Ok(())
}

/// Per-token gold logit under the clean image minus the same under the distorted image.
pub fn delta_logits(clean: &[f64], distorted: &[f64]) -> Result<Vec<f64>> {
    if clean.len() != distorted.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: distorted.len(),
        });
    }
    check_logits("clean logits", clean)?;
    check_logits("distorted logits", distorted)?;
    Ok(clean.iter().zip(distorted).map(|(c, d)| c - d).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// `smoothed / Σ smoothed`.
    pub normalized: Vec<f64>,
}

impl TokenWeights {
    /// Wraps already-smoothed weights; every entry must be positive.
    pub fn from_smoothed(raw: Vec<f64>, smoothed: Vec<f64>) -> Result<Self> {
        if smoothed.is_empty() {
            return Err(Error::invalid("token weights must not be empty"));
        }
        if raw.len() != smoothed.len() {
            return Err(Error::LengthMismatch {
                left: raw.len(),
                right: smoothed.len(),
            });
        }
        if smoothed.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::invalid(
                "smoothed weights must be finite and positive",
            ));
        }
        let total: f64 = smoothed.iter().sum();
        let normalized = smoothed.iter().map(|w| w / total).collect();
        Ok(Self {
            raw,
            smoothed,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }
}

/// Turns raw visual-correlation weights into smoothed positive weights.
pub trait WeightSmoother: Send + Sync {
    fn smooth(&self, raw: &[f64]) -> Result<TokenWeights>;
}

/// Clamp negatives to zero, centred moving average (shrinking at the edges),
/// then add a positive floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingAverage {
    pub window: usize,
    pub floor: f64,
}

impl Default for MovingAverage {
    fn default() -> Self {
        Self {
            window: 3,
            floor: 1e-3,
        }
    }
}

impl WeightSmoother for MovingAverage {
    fn smooth(&self, raw: &[f64]) -> Result<TokenWeights> {
        smooth_weights(raw, self.floor, self.window)
    }
}

pub fn smooth_weights(raw: &[f64], floor: f64, window: usize) -> Result<TokenWeights> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot smooth an empty weight sequence"));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::invalid("smoothing floor must be positive"));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(
            "smoothing window must be a positive odd number",
        ));
    }
    check_logits("raw weights", raw)?;
    let clamped: Vec<f64> = raw.iter().map(|w| w.max(0.0)).collect();
    let half = window / 2;
    let smoothed = (0..clamped.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(clamped.len());
            let span = &clamped[lo..hi];
            span.iter().sum::<f64>() / span.len() as f64 + floor
        })
        .collect();
    TokenWeights::from_smoothed(raw.to_vec(), smoothed)
}

/// `Σ_t (w̃_t / Σ_k w̃_k) · (−log p_t)`.
pub fn reweighted_loss(gold_log_probs: &[f64], weights: &TokenWeights) -> Result<f64> {
    if gold_log_probs.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: gold_log_probs.len(),
            right: weights.len(),
        });
    }
    if let Some(bad) = gold_log_probs.iter().find(|lp| lp.is_nan() || **lp > 0.0) {
        return Err(Error::invalid(format!(
            "log-probability {bad} must be finite and not positive"
        )));
    }
    Ok(gold_log_probs
        .iter()
        .zip(&weights.normalized)
        .map(|(lp, w)| w * -lp)
        .sum())
}

/// A QA training example with its image tensors and tokenised gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub id: String,
    pub question: String,
    pub image_refs: Vec<String>,
    pub images: Vec<ImageTensor>,
    pub gold_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeightingOutput {
    pub sample_id: String,
    pub weights: TokenWeights,
    pub loss: f64,
}

fn check_response(resp: &TeacherForcedResponse, len: usize) -> Result<(), BackendError> {
    if resp.gold_token_logits.len() != len || resp.gold_token_log_probs.len() != len {
        return Err(BackendError::Protocol(format!(
            "expected {len} gold-token entries, got {} logits and {} log-probs",
            resp.gold_token_logits.len(),
            resp.gold_token_log_probs.len()
        )));
    }
    Ok(())
}

/// Distort → score clean and distorted → contrast → smooth → reweighted loss.
///
/// Image `i` of the sample is distorted with seed `seed + i`.
pub fn token_weighting_pass(
    sample: &TrainingSample,
    scorer: &dyn TeacherForcedScorer,
    schedule: NoiseSchedule,
    smoother: &dyn WeightSmoother,
    seed: u64,
) -> Result<TokenWeightingOutput> {
    let in_sample = |e: Error| Error::Stage {
        stage: "token weighting",
        qid: sample.id.clone(),
        source: Box::new(e),
    };
    if sample.gold_tokens.is_empty() {
        return Err(in_sample(Error::invalid("empty gold token sequence")));
    }
    let distorted = sample
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| distort_image(img, schedule, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()
        .map_err(in_sample)?;
    let requests = [
        TeacherForcedRequest {
            question: sample.question.clone(),
            image_refs: sample.image_refs.clone(),
            image_tensors: sample.images.clone(),
            gold_tokens: sample.gold_tokens.clone(),
        },
        TeacherForcedRequest {
            question: sample.question.clone(),
            image_refs: sample.image_refs.clone(),
            image_tensors: distorted,
            gold_tokens: sample.gold_tokens.clone(),
        },
    ];
    let mut responses = bounded_map(&requests, 2, |req| {
        let resp = scorer.teacher_forced(req)?;
        check_response(&resp, req.gold_tokens.len())?;
        Ok::<_, BackendError>(resp)
    })
    .into_iter();
    let clean = responses.next().unwrap().map_err(|e| in_sample(e.into()))?;
    let noisy = responses.next().unwrap().map_err(|e| in_sample(e.into()))?;

    let raw =
        delta_logits(&clean.gold_token_logits, &noisy.gold_token_logits).map_err(in_sample)?;
    let weights = smoother.smooth(&raw).map_err(in_sample)?;
    let loss = reweighted_loss(&clean.gold_token_log_probs, &weights).map_err(in_sample)?;
    Ok(TokenWeightingOutput {
        sample_id: sample.id.clone(),
        weights,
        loss,
    })
}

/// Runs [`token_weighting_pass`] over many samples with bounded concurrency.
/// Sample `j` uses seed `seed + 1000·j`.
pub fn token_weighting_batch(
    samples: &[TrainingSample],
    scorer: &dyn TeacherForcedScorer,
    schedule: NoiseSchedule,
    smoother: &dyn WeightSmoother,
    seed: u64,
    max_inflight: usize,
) -> Vec<Result<TokenWeightingOutput>> {
    let indexed: Vec<(usize, &TrainingSample)> = samples.iter().enumerate().collect();
    bounded_map(&indexed, max_inflight, |(j, s)| {
        token_weighting_pass(
            s,
            scorer,
            schedule,
            smoother,
            seed.wrapping_add(1000 * *j as u64),
        )
    })
}
