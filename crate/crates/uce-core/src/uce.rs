//! Uncertainty-weighted cross-entropy training.
//!
//! A training step runs one gradient-recorded stochastic forward, then `beta`
//! extra no-grad stochastic forwards. The per-pixel predictive uncertainty
//! `sigma` is the unbiased standard deviation, across those samples, of the
//! softmax probability of the class with the highest mean probability. Each
//! pixel's cross-entropy is scaled by the constant weight
//! `w = (1 + sigma)^alpha`; gradients never flow through `w`.

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::network::{ForwardMode, SegNet};
use crate::rng::RngStream;
use crate::tensor::{backward, ops, CompRecord, Tensor};

#[derive(Debug, Clone)]
pub struct UceConfig {
    /// Exponent controlling the influence of the uncertainties.
    pub alpha: f64,
    /// Number of no-grad segmentation samples per step.
    pub beta: usize,
    /// Label value excluded from the loss numerator.
    pub ignore_index: u8,
}

impl Default for UceConfig {
    fn default() -> Self {
        UceConfig {
            alpha: 10.0,
            beta: 10,
            ignore_index: crate::data::VOID_LABEL,
        }
    }
}

impl UceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 2 {
            return Err(Error::Config(format!(
                "beta must be at least 2 (std is undefined otherwise), got {}",
                self.beta
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// The pixel-wise uncertainty weight `(1 + sigma)^alpha`, in f64.
#[inline]
pub fn pixel_weight(sigma: f64, alpha: f64) -> f64 {
    (1.0 + sigma).powf(alpha)
}

/// Elementwise `(1 + sigma)^alpha` over a sigma map. Computed in f64 and
/// clamped to the f32 maximum; returns the weight tensor and how many
/// elements clamped. The result is a constant: it never carries gradients.
pub fn uncertainty_weight(sigma: &Tensor, alpha: f64) -> Result<(Tensor, u64)> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Precondition(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    {
        let sd = sigma.data();
        if let Some(bad) = sd.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "negative or non-finite sigma {bad}"
            )));
        }
    }
    let mut clamp_events = 0u64;
    let mut out = Vec::with_capacity(sigma.numel());
    for &s in sigma.data().iter() {
        let w = pixel_weight(s as f64, alpha);
        if w > f32::MAX as f64 {
            clamp_events += 1;
            out.push(f32::MAX);
        } else {
            out.push(w as f32);
        }
    }
    Ok((
        Tensor::new_unchecked(sigma.shape().to_vec(), out),
        clamp_events,
    ))
}

/// Per-pixel statistics of the sampled predictive distribution.
#[derive(Clone)]
pub struct UncertaintyStats {
    /// `[N, C, H, W]` mean softmax probability over samples.
    pub mean_probs: Tensor,
    /// `[N, C, H, W]` unbiased standard deviation over samples.
    pub std_probs: Tensor,
    /// `[N, H, W]` std of the predicted class (argmax of the mean).
    pub sigma: Tensor,
    /// `[N, H, W]` pixel weights `(1 + sigma)^alpha`, constant.
    pub weight: Tensor,
    /// How many weights clamped to the f32 maximum.
    pub clamp_events: u64,
}

/// Streaming accumulator over softmax sample tensors: f64 sums and raw
/// second moments, so aggregation is order-insensitive to well below 1e-6
/// and never stores more than one sample at a time.
struct StatsAccumulator {
    shape: Vec<usize>,
    count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl StatsAccumulator {
    fn new() -> Self {
        StatsAccumulator {
            shape: Vec::new(),
            count: 0,
            sum: Vec::new(),
            sum_sq: Vec::new(),
        }
    }

    fn push(&mut self, probs: &Tensor) -> Result<()> {
        if self.count == 0 {
            self.shape = probs.shape().to_vec();
            self.sum = vec![0.0; probs.numel()];
            self.sum_sq = vec![0.0; probs.numel()];
        } else if probs.shape() != self.shape.as_slice() {
            return Err(Error::Dim(format!(
                "sample shape {:?} differs from first sample {:?}",
                probs.shape(),
                self.shape
            )));
        }
        for (i, &p) in probs.data().iter().enumerate() {
            let p = p as f64;
            self.sum[i] += p;
            self.sum_sq[i] += p * p;
        }
        self.count += 1;
        Ok(())
    }

    fn finish(self, alpha: f64) -> Result<UncertaintyStats> {
        if self.count < 2 {
            return Err(Error::Config(format!(
                "need at least 2 samples for an unbiased std, got {}",
                self.count
            )));
        }
        if self.shape.len() != 4 {
            return Err(Error::Dim(format!(
                "expected [N,C,H,W] samples, got {:?}",
                self.shape
            )));
        }
        let (n, c, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let beta = self.count as f64;
        let plane = h * w;
        let mut mean = vec![0.0f32; self.sum.len()];
        let mut std = vec![0.0f32; self.sum.len()];
        for i in 0..self.sum.len() {
            let m = self.sum[i] / beta;
            mean[i] = m as f32;
            let var = ((self.sum_sq[i] - self.sum[i] * self.sum[i] / beta) / (beta - 1.0)).max(0.0);
            std[i] = var.sqrt() as f32;
        }
        // sigma = std at the argmax (lowest index on ties) of the mean
        let mut sigma = vec![0.0f32; n * plane];
        for ni in 0..n {
            for p in 0..plane {
                let mut best = 0usize;
                let mut best_v = self.sum[(ni * c) * plane + p];
                for ci in 1..c {
                    let v = self.sum[(ni * c + ci) * plane + p];
                    if v > best_v {
                        best_v = v;
                        best = ci;
                    }
                }
                sigma[ni * plane + p] = std[(ni * c + best) * plane + p];
            }
        }
        let sigma = Tensor::new_unchecked(vec![n, h, w], sigma);
        let (weight, clamp_events) = uncertainty_weight(&sigma, alpha)?;
        Ok(UncertaintyStats {
            mean_probs: Tensor::new_unchecked(self.shape.clone(), mean),
            std_probs: Tensor::new_unchecked(self.shape, std),
            sigma,
            weight,
            clamp_events,
        })
    }
}

/// Aggregate explicit `[N, C, H, W]` probability samples (primarily for
/// tests and the demo; [`sample_predictive`] streams the same math).
pub fn aggregate_prob_samples(samples: &[Tensor], alpha: f64) -> Result<UncertaintyStats> {
    let mut acc = StatsAccumulator::new();
    for s in samples {
        acc.push(s)?;
    }
    acc.finish(alpha)
}

/// Run `beta` stochastic forwards with gradients disabled and aggregate the
/// per-pixel softmax statistics.
pub fn sample_predictive(
    net: &SegNet,
    images: &Tensor,
    cfg: &UceConfig,
    rng: &mut RngStream,
) -> Result<UncertaintyStats> {
    cfg.validate()?;
    let mut acc = StatsAccumulator::new();
    for _ in 0..cfg.beta {
        let mut rec = CompRecord::disabled();
        let logits = net.forward(&mut rec, images, ForwardMode::Stochastic(rng))?;
        let probs = ops::softmax(&mut rec, &logits, 1)?;
        debug_assert!(rec.is_empty());
        acc.push(&probs)?;
    }
    acc.finish(cfg.alpha)
}

/// Per-pixel cross-entropy with a validity mask.
pub struct PixelLossMap {
    /// `[N, H, W]` loss values; exactly zero at ignored pixels.
    pub loss: Tensor,
    /// True where the pixel participates in the loss.
    pub valid: Vec<bool>,
}

/// `-log_softmax(logits)[label]` per pixel; ignored pixels contribute an
/// exact zero. Differentiable with respect to the logits.
pub fn pixel_ce(
    rec: &mut CompRecord,
    logits: &Tensor,
    labels: &LabelMap,
    ignore_index: u8,
) -> Result<PixelLossMap> {
    let shape = logits.shape();
    if shape.len() != 4 {
        return Err(Error::Dim(format!(
            "pixel_ce wants [N,C,H,W] logits, got {shape:?}"
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if labels.batch != n || labels.height != h || labels.width != w {
        return Err(Error::Dim(format!(
            "labels {}x{}x{} do not match logits {shape:?}",
            labels.batch, labels.height, labels.width
        )));
    }
    if let Some(&bad) = labels
        .data
        .iter()
        .find(|&&l| l != ignore_index && l as usize >= c)
    {
        return Err(Error::Data(format!(
            "label {bad} outside [0, {c}) u {{{ignore_index}}}"
        )));
    }

    let log_probs = ops::log_softmax(rec, logits, 1)?;
    let plane = h * w;
    let mut values = vec![0.0f32; n * plane];
    let mut valid = vec![false; n * plane];
    {
        let lp = log_probs.data();
        for (i, &l) in labels.data.iter().enumerate() {
            if l != ignore_index {
                let ni = i / plane;
                let p = i % plane;
                values[i] = -lp[(ni * c + l as usize) * plane + p];
                valid[i] = true;
            }
        }
    }
    let out = Tensor::new_unchecked(vec![n, h, w], values);
    let lp_handle = log_probs.clone();
    let label_data = labels.data.clone();
    rec.push(log_probs.requires_grad(), &out, move |g| {
        lp_handle.accumulate_grad_with(|buf| {
            for (i, &l) in label_data.iter().enumerate() {
                if l != ignore_index {
                    let ni = i / plane;
                    let p = i % plane;
                    buf[(ni * c + l as usize) * plane + p] -= g[i];
                }
            }
        });
    });
    Ok(PixelLossMap { loss: out, valid })
}

/// sum(t) / numel(t) — the reduction both loss flavors share, so the
/// `alpha = 0` path is bit-identical to the plain cross-entropy loss.
fn sum_over_numel(rec: &mut CompRecord, t: &Tensor) -> Result<Tensor> {
    let s = ops::sum_all(rec, t)?;
    ops::mul_scalar(rec, &s, 1.0 / t.numel() as f32)
}

/// Plain cross-entropy: the pixel map reduced by sum/numel (ignored pixels
/// stay in the denominator).
pub fn plain_ce_loss(
    rec: &mut CompRecord,
    logits: &Tensor,
    labels: &LabelMap,
    ignore_index: u8,
) -> Result<Tensor> {
    let plm = pixel_ce(rec, logits, labels, ignore_index)?;
    sum_over_numel(rec, &plm.loss)
}

/// The uncertainty-weighted cross-entropy loss:
/// `sum_n w_n * ce_n / numel`, with gradients flowing only through `ce_n`.
pub fn uce_loss(
    rec: &mut CompRecord,
    logits: &Tensor,
    labels: &LabelMap,
    stats: &UncertaintyStats,
    cfg: &UceConfig,
) -> Result<Tensor> {
    let shape = logits.shape();
    if stats.weight.shape() != [shape[0], shape[2], shape[3]] {
        return Err(Error::Dim(format!(
            "weight map {:?} does not match logits {shape:?}",
            stats.weight.shape()
        )));
    }
    debug_assert!(!stats.weight.requires_grad());
    let plm = pixel_ce(rec, logits, labels, cfg.ignore_index)?;
    let weighted = ops::mul(rec, &plm.loss, &stats.weight)?;
    sum_over_numel(rec, &weighted)
}

/// Result of one training step.
pub struct StepOutput {
    pub loss: f32,
    pub clamp_events: u64,
}

/// One U-CE training step, in pseudocode order: a gradient-recorded
/// stochastic forward, `beta` no-grad sampling forwards, the weighted loss,
/// then backward. Gradients are zeroed first, so parameters that do not
/// participate end up with zero gradients.
pub fn training_step(
    net: &SegNet,
    images: &Tensor,
    labels: &LabelMap,
    cfg: &UceConfig,
    dropout_rng: &mut RngStream,
    sample_rng: &mut RngStream,
) -> Result<StepOutput> {
    let mut rec = CompRecord::new();
    let logits = net.forward(&mut rec, images, ForwardMode::Stochastic(dropout_rng))?;
    let stats = sample_predictive(net, images, cfg, sample_rng)?;
    let loss = uce_loss(&mut rec, &logits, labels, &stats, cfg)?;
    net.zero_grads();
    backward(&rec, &loss)?;
    Ok(StepOutput {
        loss: loss.item()?,
        clamp_events: stats.clamp_events,
    })
}

/// One plain cross-entropy step: identical to [`training_step`] with
/// `w = 1`, but without spending the `beta` sampling passes.
pub fn ce_training_step(
    net: &SegNet,
    images: &Tensor,
    labels: &LabelMap,
    ignore_index: u8,
    dropout_rng: &mut RngStream,
) -> Result<StepOutput> {
    let mut rec = CompRecord::new();
    let logits = net.forward(&mut rec, images, ForwardMode::Stochastic(dropout_rng))?;
    let loss = plain_ce_loss(&mut rec, &logits, labels, ignore_index)?;
    net.zero_grads();
    backward(&rec, &loss)?;
    Ok(StepOutput {
        loss: loss.item()?,
        clamp_events: 0,
    })
}
