//! Synthetic segmentation data: deterministic generation, the
//! scale/crop/flip augmentation pipeline, and the on-disk dataset layout.

pub mod netpbm;

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamKind};
use crate::tensor::Tensor;

/// Label value marking pixels excluded from loss and metrics.
pub const VOID_LABEL: u8 = 255;

/// One image with its per-pixel class labels. The image is interleaved RGB
/// in [0, 1]; labels are class indices with 255 reserved for void.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub width: usize,
    pub height: usize,
    pub image: Vec<f32>,
    pub label: Vec<u8>,
}

impl Sample {
    pub fn new(width: usize, height: usize, image: Vec<f32>, label: Vec<u8>) -> Result<Sample> {
        if image.len() != width * height * 3 || label.len() != width * height {
            return Err(Error::Dim(format!(
                "sample buffers do not match {width}x{height}: image {}, label {}",
                image.len(),
                label.len()
            )));
        }
        Ok(Sample {
            width,
            height,
            image,
            label,
        })
    }
}

/// Batched `[N, H, W]` class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(batch: usize, height: usize, width: usize, data: Vec<u8>) -> Result<LabelMap> {
        if data.len() != batch * height * width {
            return Err(Error::Dim(format!(
                "label map length {} != {batch}x{height}x{width}",
                data.len()
            )));
        }
        Ok(LabelMap {
            batch,
            height,
            width,
            data,
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.height + y) * self.width + x]
    }
}

/// Stack samples into an `[N, 3, H, W]` tensor (channel-planar).
pub fn batch_images(samples: &[&Sample]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Precondition("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = vec![0.0f32; samples.len() * 3 * h * w];
    for (n, s) in samples.iter().enumerate() {
        if s.height != h || s.width != w {
            return Err(Error::Dim("mixed sample sizes in one batch".into()));
        }
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[((n * 3 + c) * h + y) * w + x] = s.image[(y * w + x) * 3 + c];
                }
            }
        }
    }
    Ok(Tensor::new_unchecked(vec![samples.len(), 3, h, w], data))
}

/// Stack sample labels into an `[N, H, W]` label map.
pub fn batch_labels(samples: &[&Sample]) -> Result<LabelMap> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Precondition("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.height != h || s.width != w {
            return Err(Error::Dim("mixed sample sizes in one batch".into()));
        }
        data.extend_from_slice(&s.label);
    }
    LabelMap::new(samples.len(), h, w, data)
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Inclusive range of painted shapes per image.
    pub shapes_per_image: (usize, usize),
    /// Gaussian noise added to each image channel.
    pub pixel_noise_std: f32,
    /// Probability of flipping a label within 1 pixel of a class boundary
    /// to a uniformly random class.
    pub boundary_label_noise: f32,
    /// Width of the void frame around each label map.
    pub void_border: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_images: 200,
            height: 64,
            width: 64,
            classes: 4,
            shapes_per_image: (2, 5),
            pixel_noise_std: 0.1,
            boundary_label_noise: 0.05,
            void_border: 2,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > VOID_LABEL as usize {
            return Err(Error::Config(format!(
                "classes must lie in [2, 255), got {}",
                self.classes
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config("images must be at least 8x8".into()));
        }
        if self.shapes_per_image.0 == 0 || self.shapes_per_image.0 > self.shapes_per_image.1 {
            return Err(Error::Config(format!(
                "bad shapes_per_image range {:?}",
                self.shapes_per_image
            )));
        }
        if self.pixel_noise_std < 0.0 || !(0.0..1.0).contains(&self.boundary_label_noise) {
            return Err(Error::Config("noise parameters out of range".into()));
        }
        if 2 * self.void_border >= self.height.min(self.width) {
            return Err(Error::Config(format!(
                "void border {} swallows the image",
                self.void_border
            )));
        }
        Ok(())
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Base color of a class: a dark background for class 0, hue-spread colors
/// for the rest, so classes stay separable under pixel noise.
pub fn class_color(class: usize, classes: usize) -> [f32; 3] {
    if class == 0 {
        return [0.18, 0.18, 0.18];
    }
    let hue = 300.0 * (class - 1) as f32 / (classes - 1).max(1) as f32;
    hsv_to_rgb(hue, 0.8, 0.85)
}

/// The noise-free composition step of [`generate`]: colored geometric
/// regions (rectangles, disks, stripes) painted over a background, one class
/// per region. Deterministic in `(config.seed, index)`.
pub fn painted_sample(config: &DatasetConfig, index: u64) -> Sample {
    let mut rng = RngStream::new(config.seed, StreamKind::Datagen).derive(index);
    let (h, w) = (config.height, config.width);
    let bg = class_color(0, config.classes);
    let mut image = vec![0.0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * 3;
            image[base..base + 3].copy_from_slice(&bg);
        }
    }
    let mut label = vec![0u8; h * w];

    let (lo, hi) = config.shapes_per_image;
    let n_shapes = lo + rng.below((hi - lo + 1) as u64) as usize;
    for _ in 0..n_shapes {
        let class = 1 + rng.below((config.classes - 1) as u64) as usize;
        let mut color = class_color(class, config.classes);
        for ch in &mut color {
            *ch = (*ch + (rng.uniform(-0.04, 0.04) as f32)).clamp(0.0, 1.0);
        }
        let kind = rng.below(3);
        let mut paint = |y: usize, x: usize| {
            label[y * w + x] = class as u8;
            let base = (y * w + x) * 3;
            image[base] = color[0];
            image[base + 1] = color[1];
            image[base + 2] = color[2];
        };
        match kind {
            0 => {
                // rectangle
                let rw = 4 + rng.below((w / 2) as u64) as usize;
                let rh = 4 + rng.below((h / 2) as u64) as usize;
                let x0 = rng.below((w - 1) as u64) as usize;
                let y0 = rng.below((h - 1) as u64) as usize;
                for y in y0..(y0 + rh).min(h) {
                    for x in x0..(x0 + rw).min(w) {
                        paint(y, x);
                    }
                }
            }
            1 => {
                // disk
                let r = 3 + rng.below((h.min(w) / 4) as u64) as i64;
                let cx = rng.below(w as u64) as i64;
                let cy = rng.below(h as u64) as i64;
                for y in (cy - r).max(0)..(cy + r + 1).min(h as i64) {
                    for x in (cx - r).max(0)..(cx + r + 1).min(w as i64) {
                        let (dy, dx) = (y - cy, x - cx);
                        if dy * dy + dx * dx <= r * r {
                            paint(y as usize, x as usize);
                        }
                    }
                }
            }
            _ => {
                // stripe
                let horizontal = rng.below(2) == 0;
                let extent = if horizontal { h } else { w };
                let thickness = 3 + rng.below((extent / 6).max(2) as u64) as usize;
                let pos = rng.below((extent - 1) as u64) as usize;
                for t in pos..(pos + thickness).min(extent) {
                    if horizontal {
                        for x in 0..w {
                            paint(t, x);
                        }
                    } else {
                        for y in 0..h {
                            paint(y, t);
                        }
                    }
                }
            }
        }
    }
    Sample {
        width: w,
        height: h,
        image,
        label,
    }
}

fn generate_one(config: &DatasetConfig, index: u64) -> Sample {
    let mut sample = painted_sample(config, index);
    // the paint stage consumed a prefix of the stream; continue from a
    // noise substream so paint and noise stay independent
    let mut rng = RngStream::new(config.seed, StreamKind::Datagen)
        .derive(index)
        .derive(0x004E_015E);
    let (h, w) = (config.height, config.width);

    if config.pixel_noise_std > 0.0 {
        for v in &mut sample.image {
            *v = (*v + (rng.normal() as f32) * config.pixel_noise_std).clamp(0.0, 1.0);
        }
    }

    if config.boundary_label_noise > 0.0 {
        let clean = sample.label.clone();
        let differs = |a: usize, b: usize| clean[a] != clean[b];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let boundary = (x > 0 && differs(i, i - 1))
                    || (x + 1 < w && differs(i, i + 1))
                    || (y > 0 && differs(i, i - w))
                    || (y + 1 < h && differs(i, i + w));
                if boundary && rng.next_f32() < config.boundary_label_noise {
                    sample.label[i] = rng.below(config.classes as u64) as u8;
                }
            }
        }
    }

    let vb = config.void_border;
    if vb > 0 {
        for y in 0..h {
            for x in 0..w {
                if y < vb || y >= h - vb || x < vb || x >= w - vb {
                    sample.label[y * w + x] = VOID_LABEL;
                }
            }
        }
    }
    sample
}

/// Generate the full dataset. Each image derives its own stream from
/// `hash(seed, index)`, so generation is order- and parallelism-independent.
pub fn generate(config: &DatasetConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    Ok((0..config.num_images as u64)
        .map(|i| generate_one(config, i))
        .collect())
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub scale_range: (f64, f64),
    pub crop: (usize, usize),
    pub hflip_prob: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_range: (0.5, 2.0),
            crop: (48, 48),
            hflip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_range.0 <= 0.0 || self.scale_range.0 > self.scale_range.1 {
            return Err(Error::Config(format!(
                "bad scale range {:?}",
                self.scale_range
            )));
        }
        if self.crop.0 == 0 || self.crop.1 == 0 {
            return Err(Error::Config("crop size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!(
                "hflip_prob {} outside [0, 1]",
                self.hflip_prob
            )));
        }
        Ok(())
    }
}

/// The resolved random draws of one augmentation application.
#[derive(Debug, Clone)]
pub struct AugmentDraws {
    pub scale: f64,
    pub offset_y: usize,
    pub offset_x: usize,
    pub flip: bool,
}

/// Bilinear image resize; labels use nearest-neighbor so no new class values
/// can appear.
pub fn rescale(sample: &Sample, scale: f64) -> Sample {
    let (h, w) = (sample.height, sample.width);
    let sh = ((h as f64 * scale).round() as usize).max(1);
    let sw = ((w as f64 * scale).round() as usize).max(1);
    let mut image = vec![0.0f32; sh * sw * 3];
    let mut label = vec![0u8; sh * sw];
    for y in 0..sh {
        let fy = ((y as f64 + 0.5) * h as f64 / sh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = (fy - y0 as f64) as f32;
        let ny = (((y as f64 + 0.5) * h as f64 / sh as f64) as usize).min(h - 1);
        for x in 0..sw {
            let fx = ((x as f64 + 0.5) * w as f64 / sw as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = (fx - x0 as f64) as f32;
            for c in 0..3 {
                let p00 = sample.image[(y0 * w + x0) * 3 + c];
                let p01 = sample.image[(y0 * w + x1) * 3 + c];
                let p10 = sample.image[(y1 * w + x0) * 3 + c];
                let p11 = sample.image[(y1 * w + x1) * 3 + c];
                let top = p00 + (p01 - p00) * tx;
                let bot = p10 + (p11 - p10) * tx;
                image[(y * sw + x) * 3 + c] = top + (bot - top) * ty;
            }
            let nx = (((x as f64 + 0.5) * w as f64 / sw as f64) as usize).min(w - 1);
            label[y * sw + x] = sample.label[ny * w + nx];
        }
    }
    Sample {
        width: sw,
        height: sh,
        image,
        label,
    }
}

/// Apply augmentation with explicit draws: scale, then crop at the given
/// offsets (padding with image 0 and label void where the scaled sample is
/// smaller than the crop), then an optional horizontal flip.
pub fn augment_with(sample: &Sample, cfg: &AugmentConfig, draws: &AugmentDraws) -> Sample {
    let scaled = rescale(sample, draws.scale);
    let (ch, cw) = cfg.crop;
    let mut image = vec![0.0f32; ch * cw * 3];
    let mut label = vec![VOID_LABEL; ch * cw];
    for y in 0..ch {
        let sy = draws.offset_y + y;
        for x in 0..cw {
            let sx = draws.offset_x + x;
            let dx = if draws.flip { cw - 1 - x } else { x };
            if sy < scaled.height && sx < scaled.width {
                for c in 0..3 {
                    image[(y * cw + dx) * 3 + c] = scaled.image[(sy * scaled.width + sx) * 3 + c];
                }
                label[y * cw + dx] = scaled.label[sy * scaled.width + sx];
            }
        }
    }
    Sample {
        width: cw,
        height: ch,
        image,
        label,
    }
}

/// Random scale in `scale_range`, random crop to `cfg.crop`, horizontal flip
/// with probability `hflip_prob` — in that order.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut RngStream) -> Result<Sample> {
    cfg.validate()?;
    let scale = rng.uniform(cfg.scale_range.0, cfg.scale_range.1);
    let sh = ((sample.height as f64 * scale).round() as usize).max(1);
    let sw = ((sample.width as f64 * scale).round() as usize).max(1);
    let (ch, cw) = cfg.crop;
    let offset_y = rng.below((sh.max(ch) - ch + 1) as u64) as usize;
    let offset_x = rng.below((sw.max(cw) - cw + 1) as u64) as usize;
    let flip = rng.next_f32() < cfg.hflip_prob;
    Ok(augment_with(
        sample,
        cfg,
        &AugmentDraws {
            scale,
            offset_y,
            offset_x,
            flip,
        },
    ))
}

// ---------------------------------------------------------------------------
// on-disk layout
// ---------------------------------------------------------------------------

/// Write `{stem}.ppm` and `{stem}_label.pgm`.
pub fn save_pair(stem: impl AsRef<Path>, sample: &Sample) -> Result<()> {
    let stem = stem.as_ref();
    netpbm::write_ppm(
        stem.with_extension("ppm"),
        sample.width,
        sample.height,
        &sample.image,
    )?;
    let label_path = label_path_for(stem);
    netpbm::write_pgm(label_path, sample.width, sample.height, &sample.label)?;
    Ok(())
}

fn label_path_for(stem: &Path) -> std::path::PathBuf {
    let mut name = stem
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str("_label.pgm");
    stem.with_file_name(name)
}

/// Read the pair back. `classes` bounds the label values; anything at or
/// above it other than void is a data error.
pub fn load_pair(stem: impl AsRef<Path>, classes: usize) -> Result<Sample> {
    let stem = stem.as_ref();
    let (w, h, image) = netpbm::read_ppm(stem.with_extension("ppm"))?;
    let (lw, lh, label) = netpbm::read_pgm(label_path_for(stem))?;
    if (w, h) != (lw, lh) {
        return Err(Error::Data(format!(
            "image {w}x{h} and label {lw}x{lh} disagree for {}",
            stem.display()
        )));
    }
    if let Some(&bad) = label
        .iter()
        .find(|&&l| l != VOID_LABEL && l as usize >= classes)
    {
        return Err(Error::Data(format!(
            "label value {bad} outside [0, {classes}) u {{255}} in {}",
            stem.display()
        )));
    }
    Sample::new(w, h, image, label)
}

/// Dataset manifest: image geometry and split sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub train: usize,
    pub val: usize,
}

pub fn write_manifest(root: impl AsRef<Path>, meta: &DatasetMeta) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "classes={}", meta.classes);
    let _ = writeln!(text, "height={}", meta.height);
    let _ = writeln!(text, "width={}", meta.width);
    let _ = writeln!(text, "train={}", meta.train);
    let _ = writeln!(text, "val={}", meta.val);
    std::fs::write(root.as_ref().join("dataset.txt"), text)?;
    Ok(())
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<DatasetMeta> {
    let path = root.as_ref().join("dataset.txt");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut meta = DatasetMeta {
        classes: 0,
        height: 0,
        width: 0,
        train: 0,
        val: 0,
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("manifest line without '=': {line:?}")))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad manifest value in {line:?}")))?;
        match key.trim() {
            "classes" => meta.classes = value,
            "height" => meta.height = value,
            "width" => meta.width = value,
            "train" => meta.train = value,
            "val" => meta.val = value,
            other => return Err(Error::Format(format!("unknown manifest key {other:?}"))),
        }
    }
    if meta.classes < 2 || meta.height == 0 || meta.width == 0 {
        return Err(Error::Data("incomplete dataset manifest".into()));
    }
    Ok(meta)
}

/// Write a split under `<root>/<split>/<index:06>.ppm` + `<index:06>_label.pgm`.
pub fn save_split(root: impl AsRef<Path>, split: &str, samples: &[Sample]) -> Result<()> {
    let dir = root.as_ref().join(split);
    std::fs::create_dir_all(&dir)?;
    for (i, s) in samples.iter().enumerate() {
        save_pair(dir.join(format!("{i:06}")), s)?;
    }
    Ok(())
}

/// Load a full split in index order.
pub fn load_split(root: impl AsRef<Path>, split: &str) -> Result<(DatasetMeta, Vec<Sample>)> {
    let meta = read_manifest(&root)?;
    let count = match split {
        "train" => meta.train,
        "val" => meta.val,
        other => return Err(Error::Config(format!("unknown split {other:?}"))),
    };
    let dir = root.as_ref().join(split);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        samples.push(load_pair(dir.join(format!("{i:06}")), meta.classes)?);
    }
    Ok((meta, samples))
}
