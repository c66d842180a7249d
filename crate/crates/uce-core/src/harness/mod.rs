//! Training and evaluation loops, ablation sweeps, and CSV logging.

mod config;
mod optim;

pub use config::{apply_config_text, config_text, IoPaths, LossMode, RunConfig, TrainConfig};
pub use optim::{poly_lr, sgd_update_values, SgdHyper, SgdState};

use std::path::Path;

use crate::data::{self, LabelMap, Sample};
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionMatrix, MetricsReport, UndefinedIou};
use crate::network::{ForwardMode, NetworkConfig, SegNet};
use crate::rng::{RngStream, StreamKind};
use crate::tensor::{ops, CompRecord};
use crate::uce::{self, UceConfig};

/// Monotonic wall clock in seconds.
#[cfg(not(target_arch = "wasm32"))]
pub fn now_seconds() -> f64 {
    use std::sync::OnceLock;
    use std::time::Instant;
    static START: OnceLock<Instant> = OnceLock::new();
    START.get_or_init(Instant::now).elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
pub fn now_seconds() -> f64 {
    js_sys::Date::now() / 1000.0
}

// ---------------------------------------------------------------------------
// run log
// ---------------------------------------------------------------------------

/// One per-epoch log row. Validation fields are filled on eval epochs only.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub epoch: usize,
    pub iteration: usize,
    /// Learning rate of the last step of this epoch,
    /// `poly_lr(iteration - 1, total)`.
    pub lr: f64,
    pub train_loss: f64,
    pub clamp_events: u64,
    pub val_miou: Option<f64>,
    pub val_ece: Option<f64>,
    pub val_munc: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
}

impl RunLog {
    pub const CSV_HEADER: &'static str =
        "epoch,iteration,lr,train_loss,clamp_events,val_miou,val_ece,val_munc,wall_seconds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.iteration,
                r.lr,
                r.train_loss,
                r.clamp_events,
                opt(r.val_miou),
                opt(r.val_ece),
                opt(r.val_munc),
                r.wall_seconds
            ));
        }
        out
    }

    /// Equality over every deterministic column (wall clock excluded).
    pub fn deterministic_eq(&self, other: &RunLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.iteration == b.iteration
                    && a.lr == b.lr
                    && a.train_loss == b.train_loss
                    && a.clamp_events == b.clamp_events
                    && a.val_miou == b.val_miou
                    && a.val_ece == b.val_ece
                    && a.val_munc == b.val_munc
            })
    }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub eval_beta: usize,
    pub ece_bins: usize,
    /// Take ECE confidences from the MC-mean probabilities instead of the
    /// deterministic pass.
    pub ece_from_mc_mean: bool,
    /// Group mUnc by ground-truth class instead of predicted class.
    pub munc_by_truth: bool,
    pub miou_mode: UndefinedIou,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            eval_beta: 10,
            ece_bins: 10,
            ece_from_mc_mean: false,
            munc_by_truth: false,
            miou_mode: UndefinedIou::Exclude,
            seed: 0,
        }
    }
}

/// Pixel-aligned evaluation maps for rendering and cross-checks.
pub struct EvalArtifacts {
    pub height: usize,
    pub width: usize,
    /// Deterministic-pass predictions, `[N, H, W]`.
    pub pred: LabelMap,
    /// Max softmax probability of the deterministic pass, per pixel.
    pub confidence: Vec<f32>,
    /// Predictive uncertainty from the sampling passes, per pixel.
    pub sigma: Vec<f32>,
    /// Wrong-or-void mask (the binary accuracy map).
    pub accuracy_map: Vec<bool>,
}

/// Evaluate a network over samples: predictions and ECE confidences come
/// from the deterministic pass, sigma and mUnc from `eval_beta` stochastic
/// passes.
pub fn evaluate(
    net: &SegNet,
    samples: &[Sample],
    classes: usize,
    opts: &EvalOptions,
) -> Result<(MetricsReport, EvalArtifacts)> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("no samples to evaluate".into()));
    }
    let (h, w) = (samples[0].height, samples[0].width);
    let plane = h * w;
    let mut cm = ConfusionMatrix::new(classes);
    let mut confidences: Vec<f32> = Vec::with_capacity(samples.len() * plane);
    let mut sigmas: Vec<f32> = Vec::with_capacity(samples.len() * plane);
    let mut preds: Vec<u8> = Vec::with_capacity(samples.len() * plane);
    let mut ece_conf: Vec<f64> = Vec::new();
    let mut ece_correct: Vec<bool> = Vec::new();
    let mut sigma_correct = (0.0f64, 0u64);
    let mut sigma_wrong = (0.0f64, 0u64);
    let sample_cfg = UceConfig {
        alpha: 0.0,
        beta: opts.eval_beta,
        ignore_index: data::VOID_LABEL,
    };
    let mut sample_rng = RngStream::new(opts.seed, StreamKind::Sample);

    for sample in samples {
        if sample.height != h || sample.width != w {
            return Err(Error::Dim("mixed sample sizes in evaluation split".into()));
        }
        let images = data::batch_images(&[sample])?;
        let mut rec = CompRecord::disabled();
        let logits = net.forward(&mut rec, &images, ForwardMode::Deterministic)?;
        let det_probs = ops::softmax(&mut rec, &logits, 1)?;
        let stats = uce::sample_predictive(net, &images, &sample_cfg, &mut sample_rng)?;

        let det = det_probs.data();
        let conf_src = if opts.ece_from_mc_mean {
            stats.mean_probs.data()
        } else {
            det_probs.data()
        };
        let sig = stats.sigma.data();
        for p in 0..plane {
            let mut best = 0usize;
            let mut best_v = f32::NEG_INFINITY;
            for c in 0..classes {
                let v = det[c * plane + p];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            let mut conf = f32::NEG_INFINITY;
            for c in 0..classes {
                conf = conf.max(conf_src[c * plane + p]);
            }
            preds.push(best as u8);
            confidences.push(conf);
            sigmas.push(sig[p]);

            let truth = sample.label[p];
            if truth != data::VOID_LABEL {
                let correct = best as u8 == truth;
                ece_conf.push(conf as f64);
                ece_correct.push(correct);
                if correct {
                    sigma_correct.0 += sig[p] as f64;
                    sigma_correct.1 += 1;
                } else {
                    sigma_wrong.0 += sig[p] as f64;
                    sigma_wrong.1 += 1;
                }
            }
        }
    }

    let pred = LabelMap::new(samples.len(), h, w, preds)?;
    let truth_data: Vec<u8> = samples
        .iter()
        .flat_map(|s| s.label.iter().copied())
        .collect();
    let truth = LabelMap::new(samples.len(), h, w, truth_data)?;
    cm.update(&pred, &truth, data::VOID_LABEL)?;

    let munc_groups: &[u8] = if opts.munc_by_truth {
        &truth.data
    } else {
        &pred.data
    };
    let sigma_f64: Vec<f64> = sigmas.iter().map(|&s| s as f64).collect();
    let report = MetricsReport {
        per_class_iou: cm.per_class_iou(),
        miou: cm.miou_with(opts.miou_mode)?,
        ece: metrics::ece(&ece_conf, &ece_correct, opts.ece_bins)?,
        munc: metrics::munc(&sigma_f64, munc_groups, classes)?,
        pixel_accuracy: cm.pixel_accuracy()?,
        sigma_correct_mean: (sigma_correct.1 > 0).then(|| sigma_correct.0 / sigma_correct.1 as f64),
        sigma_wrong_mean: (sigma_wrong.1 > 0).then(|| sigma_wrong.0 / sigma_wrong.1 as f64),
    };
    let accuracy_map = metrics::binary_accuracy_map(&pred, &truth, data::VOID_LABEL)?;
    Ok((
        report,
        EvalArtifacts {
            height: h,
            width: w,
            pred,
            confidence: confidences,
            sigma: sigmas,
            accuracy_map,
        },
    ))
}

/// Write the four per-image PGM renders: predicted labels, binary accuracy
/// map (white = wrong or void), sigma map (`round(min(sigma, 0.5)/0.5*255)`),
/// and max-confidence map.
pub fn write_eval_renders(dir: impl AsRef<Path>, artifacts: &EvalArtifacts) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (h, w) = (artifacts.height, artifacts.width);
    let plane = h * w;
    for n in 0..artifacts.pred.batch {
        let range = n * plane..(n + 1) * plane;
        data::netpbm::write_pgm(
            dir.join(format!("{n:06}_pred.pgm")),
            w,
            h,
            &artifacts.pred.data[range.clone()],
        )?;
        let acc: Vec<u8> = artifacts.accuracy_map[range.clone()]
            .iter()
            .map(|&b| if b { 255 } else { 0 })
            .collect();
        data::netpbm::write_pgm(dir.join(format!("{n:06}_acc.pgm")), w, h, &acc)?;
        let sig: Vec<u8> = artifacts.sigma[range.clone()]
            .iter()
            .map(|&s| ((s.min(0.5) / 0.5) * 255.0).round() as u8)
            .collect();
        data::netpbm::write_pgm(dir.join(format!("{n:06}_sigma.pgm")), w, h, &sig)?;
        let conf: Vec<u8> = artifacts.confidence[range]
            .iter()
            .map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        data::netpbm::write_pgm(dir.join(format!("{n:06}_conf.pgm")), w, h, &conf)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Stats of one completed epoch.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub last_lr: f64,
    pub clamp_events: u64,
}

/// The stateful training loop, stepped one epoch at a time.
pub struct Trainer {
    cfg: RunConfig,
    classes: usize,
    net: SegNet,
    opt: SgdState,
    train_samples: Vec<Sample>,
    val_samples: Vec<Sample>,
    total_iterations: usize,
    iteration: usize,
    epoch: usize,
    dropout_rng: RngStream,
    sample_rng: RngStream,
    augment_rng: RngStream,
    shuffle_rng: RngStream,
    log: RunLog,
    started_at: f64,
}

impl Trainer {
    pub fn new(
        cfg: RunConfig,
        classes: usize,
        train_samples: Vec<Sample>,
        val_samples: Vec<Sample>,
    ) -> Result<Trainer> {
        cfg.validate()?;
        if train_samples.is_empty() {
            return Err(Error::Data("empty training split".into()));
        }
        let net_cfg = NetworkConfig {
            in_channels: 3,
            num_classes: classes,
            block_channels: cfg.block_channels.clone(),
            kernel_size: 3,
            dropout_ratio: cfg.dropout_ratio,
            seed: cfg.train.seed,
        };
        let net = SegNet::build(&net_cfg)?;
        let opt = SgdState::new(&net.parameters());
        let batches_per_epoch = train_samples.len().div_ceil(cfg.train.batch_size);
        let total_iterations = cfg.train.epochs * batches_per_epoch;
        let seed = cfg.train.seed;
        Ok(Trainer {
            classes,
            net,
            opt,
            train_samples,
            val_samples,
            total_iterations,
            iteration: 0,
            epoch: 0,
            dropout_rng: RngStream::new(seed, StreamKind::Dropout),
            sample_rng: RngStream::new(seed, StreamKind::Sample),
            augment_rng: RngStream::new(seed, StreamKind::Augment),
            shuffle_rng: RngStream::new(seed, StreamKind::Shuffle),
            log: RunLog::default(),
            started_at: now_seconds(),
            cfg,
        })
    }

    pub fn net(&self) -> &SegNet {
        &self.net
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn total_iterations(&self) -> usize {
        self.total_iterations
    }

    fn is_eval_epoch(&self, epoch: usize) -> bool {
        epoch == self.cfg.train.epochs
            || (self.cfg.eval_every > 0 && epoch.is_multiple_of(self.cfg.eval_every))
    }

    /// Run one epoch: shuffled mini-batches, per-sample augmentation, one
    /// optimizer step per batch under the polynomial schedule. A non-finite
    /// loss aborts with [`Error::Diverged`].
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        if self.epoch >= self.cfg.train.epochs {
            return Err(Error::Precondition(
                "all configured epochs already ran".into(),
            ));
        }
        let mut order: Vec<usize> = (0..self.train_samples.len()).collect();
        self.shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut clamp_events = 0u64;
        let mut steps = 0usize;
        let mut last_lr = 0.0f64;
        for batch_idx in order.chunks(self.cfg.train.batch_size) {
            let augmented: Vec<Sample> = batch_idx
                .iter()
                .map(|&i| {
                    data::augment(
                        &self.train_samples[i],
                        &self.cfg.augment,
                        &mut self.augment_rng,
                    )
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = augmented.iter().collect();
            let images = data::batch_images(&refs)?;
            let labels = data::batch_labels(&refs)?;

            let lr = poly_lr(
                self.iteration,
                self.total_iterations,
                self.cfg.train.lr_base,
                self.cfg.train.poly_power,
            )?;
            let step = match self.cfg.train.loss_mode {
                LossMode::Uce => uce::training_step(
                    &self.net,
                    &images,
                    &labels,
                    &self.cfg.train.uce,
                    &mut self.dropout_rng,
                    &mut self.sample_rng,
                ),
                LossMode::Ce => uce::ce_training_step(
                    &self.net,
                    &images,
                    &labels,
                    self.cfg.train.uce.ignore_index,
                    &mut self.dropout_rng,
                ),
            };
            let step = match step {
                Ok(s) if s.loss.is_finite() => s,
                // a numeric error mid-step means the loss has no finite value
                Ok(_) | Err(Error::Numeric(_)) => {
                    return Err(Error::Diverged {
                        epoch: self.epoch + 1,
                        iteration: self.iteration,
                    })
                }
                Err(e) => return Err(e),
            };
            self.opt.step(
                &self.net.parameters(),
                &SgdHyper {
                    lr,
                    momentum: self.cfg.train.momentum,
                    weight_decay: self.cfg.train.weight_decay,
                    head_lr_multiplier: self.cfg.train.head_lr_multiplier,
                },
            )?;
            loss_sum += step.loss as f64;
            clamp_events += step.clamp_events;
            self.iteration += 1;
            last_lr = lr;
            steps += 1;
        }
        self.epoch += 1;

        let stats = EpochStats {
            epoch: self.epoch,
            mean_loss: loss_sum / steps as f64,
            last_lr,
            clamp_events,
        };
        let val = if self.is_eval_epoch(self.epoch) && !self.val_samples.is_empty() {
            Some(self.evaluate_val()?)
        } else {
            None
        };
        self.log.rows.push(RunRow {
            epoch: stats.epoch,
            iteration: self.iteration,
            lr: stats.last_lr,
            train_loss: stats.mean_loss,
            clamp_events: stats.clamp_events,
            val_miou: val.as_ref().map(|r| r.miou),
            val_ece: val.as_ref().map(|r| r.ece),
            val_munc: val.as_ref().map(|r| r.munc),
            wall_seconds: now_seconds() - self.started_at,
        });
        Ok(stats)
    }

    pub fn evaluate_val(&self) -> Result<MetricsReport> {
        let opts = EvalOptions {
            eval_beta: self.cfg.train.eval_beta,
            seed: self.cfg.train.seed,
            ..Default::default()
        };
        Ok(evaluate(&self.net, &self.val_samples, self.classes, &opts)?.0)
    }

    /// Run every remaining epoch.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.cfg.train.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn into_net(self) -> SegNet {
        self.net
    }
}

/// Outcome of a completed (or aborted) training run.
pub struct TrainOutcome {
    pub net: SegNet,
    pub log: RunLog,
    pub final_report: Option<MetricsReport>,
    pub diverged: Option<(usize, usize)>,
}

/// Train in memory over preloaded splits.
pub fn train_in_memory(
    cfg: RunConfig,
    classes: usize,
    train_samples: Vec<Sample>,
    val_samples: Vec<Sample>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, classes, train_samples, val_samples)?;
    let mut diverged = None;
    while trainer.epochs_done() < trainer.config().train.epochs {
        match trainer.run_epoch() {
            Ok(_) => {}
            Err(Error::Diverged { epoch, iteration }) => {
                diverged = Some((epoch, iteration));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let final_report = if diverged.is_none() && !trainer.val_samples.is_empty() {
        Some(trainer.evaluate_val()?)
    } else {
        None
    };
    let log = trainer.log.clone();
    Ok(TrainOutcome {
        net: trainer.into_net(),
        log,
        final_report,
        diverged,
    })
}

/// Train from a dataset directory and write `model.ckpt`, `run.csv`, and
/// `config.txt` into `out_dir`. A diverged run still writes its partial log
/// plus a `diverged.txt` report, then surfaces [`Error::Diverged`].
pub fn train(
    cfg: &RunConfig,
    data_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<TrainOutcome> {
    let (meta, train_samples) = data::load_split(&data_dir, "train")?;
    let val_samples = match data::load_split(&data_dir, "val") {
        Ok((_, v)) => v,
        Err(_) => Vec::new(),
    };
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let outcome = train_in_memory(cfg.clone(), meta.classes, train_samples, val_samples)?;
    std::fs::write(out_dir.join("run.csv"), outcome.log.to_csv())?;
    std::fs::write(out_dir.join("config.txt"), config_text(cfg))?;
    if let Some((epoch, iteration)) = outcome.diverged {
        std::fs::write(
            out_dir.join("diverged.txt"),
            format!("non-finite loss at epoch {epoch}, iteration {iteration}\n"),
        )?;
        return Err(Error::Diverged { epoch, iteration });
    }
    outcome.net.save(out_dir.join("model.ckpt"))?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    Beta,
    DropoutRatio,
    LrBase,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<SweepAxis> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "beta" => Ok(SweepAxis::Beta),
            "dropout" | "dropout_ratio" => Ok(SweepAxis::DropoutRatio),
            "lr" | "lr_base" => Ok(SweepAxis::LrBase),
            other => Err(Error::Config(format!(
                "sweep axis must be alpha|beta|dropout|lr, got {other:?}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::DropoutRatio => "dropout",
            SweepAxis::LrBase => "lr",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub repetitions: usize,
    pub base: RunConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("sweep needs at least one repetition".into()));
        }
        for &v in &self.values {
            match self.axis {
                SweepAxis::Alpha if v < 0.0 => {
                    return Err(Error::Config(format!("alpha value {v} below 0")));
                }
                SweepAxis::Beta if v < 2.0 || v.fract() != 0.0 => {
                    return Err(Error::Config(format!(
                        "beta value {v} must be an integer >= 2"
                    )));
                }
                SweepAxis::DropoutRatio if !(0.0..1.0).contains(&v) => {
                    return Err(Error::Config(format!("dropout value {v} outside [0, 1)")));
                }
                SweepAxis::LrBase if v <= 0.0 => {
                    return Err(Error::Config(format!("lr value {v} must be positive")));
                }
                _ => {}
            }
        }
        self.base.validate()
    }

    fn configure(&self, value: f64, rep: usize) -> RunConfig {
        let mut cfg = self.base.clone();
        match self.axis {
            SweepAxis::Alpha => {
                cfg.train.loss_mode = LossMode::Uce;
                cfg.train.uce.alpha = value;
            }
            SweepAxis::Beta => {
                cfg.train.loss_mode = LossMode::Uce;
                cfg.train.uce.beta = value as usize;
            }
            SweepAxis::DropoutRatio => cfg.dropout_ratio = value as f32,
            SweepAxis::LrBase => cfg.train.lr_base = value,
        }
        cfg.train.seed = self.base.train.seed + rep as u64;
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    /// `Some(seed)` for run rows, `None` for the aggregate row.
    pub seed: Option<u64>,
    pub miou: Option<f64>,
    pub ece: Option<f64>,
    pub munc: Option<f64>,
    pub wall_seconds: Option<f64>,
    pub diverged: bool,
    pub miou_std: Option<f64>,
    pub ece_std: Option<f64>,
    pub munc_std: Option<f64>,
    pub wall_seconds_std: Option<f64>,
}

pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const CSV_HEADER: &'static str =
        "axis,value,seed,miou,ece,munc,wall_seconds,status,miou_std,ece_std,munc_std,wall_seconds_std";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.axis.as_str(),
                r.value,
                r.seed
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "agg".into()),
                opt(r.miou),
                opt(r.ece),
                opt(r.munc),
                opt(r.wall_seconds),
                if r.diverged { "diverged" } else { "ok" },
                opt(r.miou_std),
                opt(r.ece_std),
                opt(r.munc_std),
                opt(r.wall_seconds_std),
            ));
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One train+evaluate per (value, seed); seeds are `base.seed + rep`.
/// Diverged runs are recorded, not fatal; each value gets one aggregate row
/// with mean/std over its completed repetitions.
pub fn sweep(
    spec: &SweepSpec,
    classes: usize,
    train_samples: &[Sample],
    val_samples: &[Sample],
) -> Result<SweepTable> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &value in &spec.values {
        let mut mious = Vec::new();
        let mut eces = Vec::new();
        let mut muncs = Vec::new();
        let mut walls = Vec::new();
        for rep in 0..spec.repetitions {
            let cfg = spec.configure(value, rep);
            let seed = cfg.train.seed;
            let t0 = now_seconds();
            let outcome =
                train_in_memory(cfg, classes, train_samples.to_vec(), val_samples.to_vec())?;
            let wall = now_seconds() - t0;
            if outcome.diverged.is_some() {
                rows.push(SweepRow {
                    value,
                    seed: Some(seed),
                    miou: None,
                    ece: None,
                    munc: None,
                    wall_seconds: Some(wall),
                    diverged: true,
                    miou_std: None,
                    ece_std: None,
                    munc_std: None,
                    wall_seconds_std: None,
                });
                continue;
            }
            let report = outcome
                .final_report
                .ok_or_else(|| Error::UndefinedMetric("run finished without evaluation".into()))?;
            rows.push(SweepRow {
                value,
                seed: Some(seed),
                miou: Some(report.miou),
                ece: Some(report.ece),
                munc: Some(report.munc),
                wall_seconds: Some(wall),
                diverged: false,
                miou_std: None,
                ece_std: None,
                munc_std: None,
                wall_seconds_std: None,
            });
            mious.push(report.miou);
            eces.push(report.ece);
            muncs.push(report.munc);
            walls.push(wall);
        }
        let agg = |vals: &[f64]| -> (Option<f64>, Option<f64>) {
            if vals.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(vals);
                (Some(m), Some(s))
            }
        };
        let (miou, miou_std) = agg(&mious);
        let (ece_m, ece_std) = agg(&eces);
        let (munc_m, munc_std) = agg(&muncs);
        let (wall, wall_std) = agg(&walls);
        rows.push(SweepRow {
            value,
            seed: None,
            miou,
            ece: ece_m,
            munc: munc_m,
            wall_seconds: wall,
            diverged: mious.is_empty(),
            miou_std,
            ece_std,
            munc_std,
            wall_seconds_std: wall_std,
        });
    }
    Ok(SweepTable {
        axis: spec.axis,
        rows,
    })
}
