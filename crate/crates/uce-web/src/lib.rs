//! Interactive browser demo.
//!
//! Exposes three operations to the page: rebuild the lab (fresh synthetic
//! dataset + network), train epochs, and render per-image panels (input,
//! ground truth, prediction, binary accuracy map, predictive uncertainty).
//! A static helper plots the pixel-weight curve `(1 + sigma)^alpha`.

use wasm_bindgen::prelude::*;

use uce_core::data::{self, DatasetConfig, Sample, VOID_LABEL};
use uce_core::harness::{evaluate, EvalArtifacts, EvalOptions, LossMode, RunConfig, Trainer};
use uce_core::uce::pixel_weight;

fn js_err(e: uce_core::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

const SIDE: usize = 32;
const TRAIN_IMAGES: usize = 24;
const VAL_IMAGES: usize = 8;

/// One self-contained training lab over an in-memory synthetic dataset.
#[wasm_bindgen]
pub struct UceLab {
    trainer: Trainer,
    val: Vec<Sample>,
    classes: usize,
    artifacts: Option<EvalArtifacts>,
}

#[wasm_bindgen]
impl UceLab {
    /// Build a fresh dataset and network. `dropout_pct` is 0..100;
    /// `use_uce = false` trains with plain cross-entropy.
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u32,
        dropout_pct: u32,
        alpha: f64,
        beta: u32,
        use_uce: bool,
        epochs: u32,
    ) -> Result<UceLab, JsValue> {
        let dcfg = DatasetConfig {
            num_images: TRAIN_IMAGES + VAL_IMAGES,
            height: SIDE,
            width: SIDE,
            classes: 4,
            pixel_noise_std: 0.08,
            boundary_label_noise: 0.04,
            void_border: 1,
            seed: seed as u64,
            ..Default::default()
        };
        let samples = data::generate(&dcfg).map_err(js_err)?;
        let train = samples[..TRAIN_IMAGES].to_vec();
        let val = samples[TRAIN_IMAGES..].to_vec();

        let mut cfg = RunConfig {
            block_channels: vec![8, 16],
            dropout_ratio: dropout_pct as f32 / 100.0,
            eval_every: 1,
            ..Default::default()
        };
        cfg.augment.crop = (28, 28);
        cfg.train.epochs = epochs.max(1) as usize;
        cfg.train.batch_size = 6;
        cfg.train.loss_mode = if use_uce { LossMode::Uce } else { LossMode::Ce };
        cfg.train.uce.alpha = alpha;
        cfg.train.uce.beta = (beta as usize).max(2);
        cfg.train.eval_beta = 8;
        cfg.train.seed = seed as u64;
        cfg.validate().map_err(js_err)?;

        let trainer = Trainer::new(cfg, dcfg.classes, train, val.clone()).map_err(js_err)?;
        Ok(UceLab {
            trainer,
            val,
            classes: dcfg.classes,
            artifacts: None,
        })
    }

    /// Run one epoch. Returns `epoch,loss,lr,val_miou` as a CSV line.
    pub fn train_epoch(&mut self) -> Result<String, JsValue> {
        self.trainer.run_epoch().map_err(js_err)?;
        self.artifacts = None;
        let row = self.trainer.log().rows.last().unwrap();
        Ok(format!(
            "{},{:.4},{:.5},{}",
            row.epoch,
            row.train_loss,
            row.lr,
            row.val_miou.map(|m| format!("{m:.4}")).unwrap_or_default()
        ))
    }

    pub fn epochs_done(&self) -> u32 {
        self.trainer.epochs_done() as u32
    }

    pub fn total_epochs(&self) -> u32 {
        self.trainer.config().train.epochs as u32
    }

    pub fn num_val_images(&self) -> u32 {
        self.val.len() as u32
    }

    pub fn side(&self) -> u32 {
        SIDE as u32
    }

    /// Evaluate the current network on the validation split.
    /// Returns `miou,ece,munc,pixel_accuracy`.
    pub fn evaluate_now(&mut self) -> Result<String, JsValue> {
        let opts = EvalOptions {
            eval_beta: self.trainer.config().train.eval_beta,
            seed: self.trainer.config().train.seed,
            ..Default::default()
        };
        let (report, artifacts) =
            evaluate(self.trainer.net(), &self.val, self.classes, &opts).map_err(js_err)?;
        self.artifacts = Some(artifacts);
        Ok(format!(
            "{:.4},{:.4},{:.4},{:.4}",
            report.miou, report.ece, report.munc, report.pixel_accuracy
        ))
    }

    /// RGBA pixels (side*side*4) of one panel for a validation image.
    /// Kinds: image | truth | pred | accuracy | uncertainty | confidence.
    pub fn panel(&mut self, index: u32, kind: &str) -> Result<Vec<u8>, JsValue> {
        let index = index as usize % self.val.len().max(1);
        if self.artifacts.is_none() && kind != "image" && kind != "truth" {
            self.evaluate_now()?;
        }
        let sample = &self.val[index];
        let plane = SIDE * SIDE;
        let mut rgba = vec![0u8; plane * 4];
        match kind {
            "image" => {
                for p in 0..plane {
                    for c in 0..3 {
                        rgba[p * 4 + c] = (sample.image[p * 3 + c] * 255.0).round() as u8;
                    }
                    rgba[p * 4 + 3] = 255;
                }
            }
            "truth" => {
                for p in 0..plane {
                    write_class_color(&mut rgba, p, sample.label[p], self.classes);
                }
            }
            "pred" => {
                let artifacts = self.artifacts.as_ref().unwrap();
                for p in 0..plane {
                    let label = artifacts.pred.data[index * plane + p];
                    write_class_color(&mut rgba, p, label, self.classes);
                }
            }
            "accuracy" => {
                let artifacts = self.artifacts.as_ref().unwrap();
                for p in 0..plane {
                    let v = if artifacts.accuracy_map[index * plane + p] {
                        255
                    } else {
                        0
                    };
                    rgba[p * 4..p * 4 + 3].fill(v);
                    rgba[p * 4 + 3] = 255;
                }
            }
            "uncertainty" => {
                let artifacts = self.artifacts.as_ref().unwrap();
                for p in 0..plane {
                    let s = artifacts.sigma[index * plane + p];
                    let v = ((s.min(0.5) / 0.5) * 255.0).round() as u8;
                    // black -> orange ramp
                    rgba[p * 4] = v;
                    rgba[p * 4 + 1] = (v as f32 * 0.65) as u8;
                    rgba[p * 4 + 2] = v / 6;
                    rgba[p * 4 + 3] = 255;
                }
            }
            "confidence" => {
                let artifacts = self.artifacts.as_ref().unwrap();
                for p in 0..plane {
                    let v = (artifacts.confidence[index * plane + p].clamp(0.0, 1.0) * 255.0)
                        .round() as u8;
                    rgba[p * 4..p * 4 + 3].fill(v);
                    rgba[p * 4 + 3] = 255;
                }
            }
            other => return Err(JsValue::from_str(&format!("unknown panel kind {other:?}"))),
        }
        Ok(rgba)
    }
}

fn write_class_color(rgba: &mut [u8], p: usize, label: u8, classes: usize) {
    let color = if label == VOID_LABEL {
        [0.0, 0.0, 0.0]
    } else {
        data::class_color(label as usize, classes)
    };
    for c in 0..3 {
        rgba[p * 4 + c] = (color[c] * 255.0).round() as u8;
    }
    rgba[p * 4 + 3] = 255;
}

/// Sampled pixel-weight curve `w = (1 + sigma)^alpha` over sigma in [0, 0.5].
#[wasm_bindgen]
pub fn weight_curve(alpha: f64, points: u32) -> Vec<f64> {
    let points = points.max(2);
    (0..points)
        .map(|i| pixel_weight(0.5 * i as f64 / (points - 1) as f64, alpha))
        .collect()
}
