//! Procedural shapes-on-background detection datasets with a controllable
//! domain shift between a labelled source split and unlabelled target splits.

mod shift;
mod store;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use shift::{apply_domain_shift, ShiftConfig};
pub use store::{load_dataset, save_dataset, Manifest, ManifestEntry};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::seeding::{rng_for, sub_seed, Stream};

/// Smallest object side the generator will ever emit, in pixels.
pub const MIN_OBJECT_SIDE: usize = 8;

/// Dense `H x W x 3` image with values in `[0, 1]`, row-major, channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&color);
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, color: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&color);
    }

    /// Rounds every value to the nearest multiple of 1/255 so the image
    /// survives an 8-bit lossless round trip unchanged.
    pub fn quantize(&mut self) {
        for v in self.data.iter_mut() {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    /// Channel-first copy, `3 x H x W`.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out[i] = px[0];
            out[plane + i] = px[1];
            out[2 * plane + i] = px[2];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Adversarial domain label: 0 for source, 1 for target.
    pub fn label(self) -> f64 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxLabel {
    /// Foreground class in `1..=C`.
    pub class_id: usize,
    pub bbox: BBox,
}

impl BoxLabel {
    pub fn is_valid(&self, height: usize, width: usize, classes: usize) -> bool {
        self.bbox.is_valid()
            && self.bbox.x1 >= 0.0
            && self.bbox.y1 >= 0.0
            && self.bbox.x2 <= width as f64
            && self.bbox.y2 <= height as f64
            && (1..=classes).contains(&self.class_id)
    }
}

/// One training or evaluation image. Target samples never carry labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSample {
    pub image: Image,
    pub domain: Domain,
    pub labels: Option<Vec<BoxLabel>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Object side range in pixels before jitter.
    #[serde(default = "default_size_min")]
    pub size_min: usize,
    #[serde(default = "default_size_max")]
    pub size_max: usize,
    #[serde(default)]
    pub shift: ShiftConfig,
    pub domain: Domain,
    pub seed: u64,
}

fn default_size_min() -> usize {
    10
}

fn default_size_max() -> usize {
    22
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be > 0".into()));
        }
        if self.classes == 0 {
            return Err(Error::Config("at least one class is required".into()));
        }
        if self.classes > 3 {
            return Err(Error::Config("the shape generator supports at most 3 classes".into()));
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(Error::Config("objects_per_image range must satisfy 1 <= min <= max".into()));
        }
        if self.size_min < MIN_OBJECT_SIDE || self.size_min > self.size_max {
            return Err(Error::Config(format!(
                "object size range must satisfy {MIN_OBJECT_SIDE} <= min <= max"
            )));
        }
        if self.height.min(self.width) < self.size_min.max(MIN_OBJECT_SIDE) {
            return Err(Error::Config(format!(
                "image size {}x{} too small to place a {} px object",
                self.height, self.width, self.size_min
            )));
        }
        self.shift.validate()
    }
}

/// A generated split. Target-domain labels are kept out of the samples and are
/// only reachable through [`Dataset::eval_labels`], which counts its callers.
#[derive(Debug)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<DetectionSample>,
    pub sample_seeds: Vec<u64>,
    quarantined: Vec<Vec<BoxLabel>>,
    label_reads: AtomicUsize,
}

impl Dataset {
    pub(crate) fn from_parts(
        config: DatasetConfig,
        samples: Vec<DetectionSample>,
        sample_seeds: Vec<u64>,
        quarantined: Vec<Vec<BoxLabel>>,
    ) -> Self {
        Self {
            config,
            samples,
            sample_seeds,
            quarantined,
            label_reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.config.domain
    }

    /// Ground truth for evaluation. Reading it on a target split is counted.
    pub fn eval_labels(&self) -> &[Vec<BoxLabel>] {
        if self.config.domain == Domain::Target {
            self.label_reads.fetch_add(1, Ordering::SeqCst);
        }
        &self.quarantined
    }

    /// Number of times target ground truth was read through [`Self::eval_labels`].
    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::SeqCst)
    }
}

/// Default background colors when a shift does not provide its own palette.
pub const DEFAULT_PALETTE: [[f64; 3]; 4] = [
    [0.22, 0.18, 0.14],
    [0.16, 0.22, 0.18],
    [0.28, 0.24, 0.20],
    [0.18, 0.18, 0.24],
];

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(cfg.n);
    let mut seeds = Vec::with_capacity(cfg.n);
    let mut labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let s = sub_seed(cfg.seed, Stream::Sample, i as u64);
        let (image, boxes) = render_sample(cfg, s);
        seeds.push(s);
        samples.push(DetectionSample {
            image,
            domain: cfg.domain,
            labels: (cfg.domain == Domain::Source).then(|| boxes.clone()),
        });
        labels.push(boxes);
    }
    Ok(Dataset::from_parts(cfg.clone(), samples, seeds, labels))
}

fn render_sample(cfg: &DatasetConfig, seed: u64) -> (Image, Vec<BoxLabel>) {
    let mut rng = rng_for(seed, Stream::Sample, 0);
    let (h, w) = (cfg.height, cfg.width);
    let palette: &[[f64; 3]] = if cfg.shift.background_palette.is_empty() {
        &DEFAULT_PALETTE
    } else {
        &cfg.shift.background_palette
    };
    let base = palette[rng.random_range(0..palette.len())];
    let bg_luma = (base[0] + base[1] + base[2]) / 3.0;

    // Low-amplitude linear gradient across the background.
    let (gx, gy) = (rng.random_range(-0.08..=0.08), rng.random_range(-0.08..=0.08));
    let mut image = Image::filled(h, w, base);
    for y in 0..h {
        for x in 0..w {
            let t = gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
            let c = [base[0] + t, base[1] + t, base[2] + t].map(|v| v.clamp(0.0, 1.0));
            image.set_pixel(y, x, c);
        }
    }

    let count = rng.random_range(cfg.objects_min..=cfg.objects_max);
    let mut boxes: Vec<BoxLabel> = Vec::with_capacity(count);
    let max_side = h.min(w);
    let mut attempts = 0usize;
    while boxes.len() < count {
        attempts += 1;
        let class_id = rng.random_range(1..=cfg.classes);
        let base_side = rng.random_range(cfg.size_min..=cfg.size_max) as f64;
        let jitter = if cfg.shift.scale_jitter > 0.0 {
            1.0 + rng.random_range(-cfg.shift.scale_jitter..=cfg.shift.scale_jitter)
        } else {
            1.0
        };
        let side = ((base_side * jitter).round() as usize).clamp(MIN_OBJECT_SIDE, max_side);
        let x1 = rng.random_range(0..=w - side);
        let y1 = rng.random_range(0..=h - side);
        let bbox = BBox::new(x1 as f64, y1 as f64, (x1 + side) as f64, (y1 + side) as f64);

        // Objects may touch but never overlap heavily; give up on crowded canvases.
        let accepted = attempts > 200 || boxes.iter().all(|b| b.bbox.iou_unchecked(&bbox) < 0.2);
        if !accepted {
            continue;
        }
        let color = object_color(&mut rng, bg_luma);
        draw_shape(&mut image, class_id, &bbox, color);
        boxes.push(BoxLabel { class_id, bbox });
    }

    let mut image = apply_domain_shift(&image, &cfg.shift, seed);
    image.quantize();
    (image, boxes)
}

/// Saturated color whose brightness contrasts with the background.
fn object_color<R: Rng>(rng: &mut R, bg_luma: f64) -> [f64; 3] {
    let hue = rng.random_range(0.0..1.0);
    let sat = rng.random_range(0.45..0.9);
    let val = if bg_luma < 0.5 {
        rng.random_range(0.7..1.0)
    } else {
        rng.random_range(0.1..0.4)
    };
    let (r, g, b) = shift::hsv_to_rgb(hue, sat, val);
    [r, g, b]
}

/// Rasterizes shape `class_id` (1 disc, 2 square, 3 triangle) inside `bbox`,
/// sampling pixel centers.
fn draw_shape(image: &mut Image, class_id: usize, bbox: &BBox, color: [f64; 3]) {
    let (cx, cy) = bbox.center();
    let side = bbox.width();
    let r = 0.5 * side;
    for y in bbox.y1 as usize..bbox.y2 as usize {
        for x in bbox.x1 as usize..bbox.x2 as usize {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = match class_id {
                1 => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
                2 => true,
                _ => {
                    // Apex at top center, base along the bottom edge.
                    let t = (py - bbox.y1) / side;
                    (px - cx).abs() <= 0.5 * side * t
                }
            };
            if inside {
                image.set_pixel(y, x, color);
            }
        }
    }
}

/// The desk-scale benchmark: source, unlabelled target train and labelled
/// target eval splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub n_source: usize,
    pub n_target_train: usize,
    pub n_target_eval: usize,
    pub target_shift: ShiftConfig,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            classes: 3,
            objects_min: 1,
            objects_max: 3,
            n_source: 500,
            n_target_train: 500,
            n_target_eval: 200,
            target_shift: default_target_shift(),
            seed: 0,
        }
    }
}

pub fn default_target_shift() -> ShiftConfig {
    ShiftConfig {
        hue_shift: 0.5,
        noise_std: 0.05,
        blur_radius: 0.5,
        background_palette: vec![
            [0.40, 0.36, 0.32],
            [0.34, 0.40, 0.44],
            [0.42, 0.38, 0.36],
            [0.36, 0.40, 0.34],
        ],
        scale_jitter: 0.2,
    }
}

/// Split names used on disk.
pub const SPLITS: [&str; 3] = ["source", "target_train", "target_eval"];

impl BenchmarkConfig {
    pub fn split(&self, name: &str) -> Result<DatasetConfig> {
        let (n, shift, domain, stream) = match name {
            "source" => (self.n_source, ShiftConfig::default(), Domain::Source, 0),
            "target_train" => (self.n_target_train, self.target_shift.clone(), Domain::Target, 1),
            "target_eval" => (self.n_target_eval, self.target_shift.clone(), Domain::Target, 2),
            other => return Err(Error::Config(format!("unknown split {other:?}"))),
        };
        Ok(DatasetConfig {
            n,
            height: self.height,
            width: self.width,
            classes: self.classes,
            objects_min: self.objects_min,
            objects_max: self.objects_max,
            size_min: default_size_min(),
            size_max: default_size_max(),
            shift,
            domain,
            seed: sub_seed(self.seed, Stream::Sample, 1_000_000 + stream),
        })
    }
}

/// The three benchmark splits, generated in memory.
pub struct Benchmark {
    pub source: Dataset,
    pub target_train: Dataset,
    pub target_eval: Dataset,
}

impl Benchmark {
    pub fn generate(cfg: &BenchmarkConfig) -> Result<Self> {
        Ok(Self {
            source: generate_dataset(&cfg.split("source")?)?,
            target_train: generate_dataset(&cfg.split("target_train")?)?,
            target_eval: generate_dataset(&cfg.split("target_eval")?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, domain: Domain, shift: ShiftConfig, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n,
            height: 64,
            width: 64,
            classes: 3,
            objects_min: 1,
            objects_max: 3,
            size_min: 10,
            size_max: 22,
            shift,
            domain,
            seed,
        }
    }

    #[test]
    fn single_sample_single_object() {
        let mut cfg = small(1, Domain::Source, ShiftConfig::default(), 7);
        cfg.objects_max = 1;
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 1);
        let labels = ds.samples[0].labels.as_ref().unwrap();
        assert_eq!(labels.len(), 1);
        assert!(labels[0].is_valid(64, 64, 3));
        let again = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.samples, again.samples);
    }

    #[test]
    fn labels_valid_across_seed_sweep() {
        for seed in 0..100 {
            let cfg = small(3, Domain::Source, default_target_shift(), seed);
            let ds = generate_dataset(&cfg).unwrap();
            for s in &ds.samples {
                let labels = s.labels.as_ref().unwrap();
                assert!((1..=3).contains(&labels.len()));
                for l in labels {
                    assert!(l.is_valid(64, 64, 3), "seed {seed}: {l:?}");
                    assert!(l.bbox.width() >= MIN_OBJECT_SIDE as f64);
                }
                assert!(s.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn target_samples_hide_labels() {
        let ds = generate_dataset(&small(4, Domain::Target, default_target_shift(), 2)).unwrap();
        assert!(ds.samples.iter().all(|s| s.labels.is_none()));
        assert_eq!(ds.label_reads(), 0);
        assert_eq!(ds.eval_labels().len(), 4);
        assert_eq!(ds.label_reads(), 1);
    }

    #[test]
    fn rejects_tiny_images() {
        let mut cfg = small(1, Domain::Source, ShiftConfig::default(), 0);
        cfg.height = 6;
        cfg.width = 6;
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
        let mut cfg = small(1, Domain::Source, ShiftConfig::default(), 0);
        cfg.objects_min = 0;
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn shifted_mean_is_separated() {
        // Per-image channel means; the standard error of the difference of
        // dataset means is computed from the pooled per-image spread.
        fn channel_means(ds: &Dataset) -> Vec<[f64; 3]> {
            ds.samples
                .iter()
                .map(|s| {
                    let mut m = [0.0; 3];
                    for px in s.image.data.chunks_exact(3) {
                        for c in 0..3 {
                            m[c] += px[c];
                        }
                    }
                    m.map(|v| v / (s.image.height * s.image.width) as f64)
                })
                .collect()
        }
        let shift = ShiftConfig {
            hue_shift: 0.5,
            noise_std: 0.08,
            ..Default::default()
        };
        let shifted = generate_dataset(&small(500, Domain::Target, shift, 1)).unwrap();
        let plain = generate_dataset(&small(500, Domain::Target, ShiftConfig::default(), 1)).unwrap();
        let (a, b) = (channel_means(&shifted), channel_means(&plain));
        let n = a.len() as f64;
        let mut separated = false;
        for c in 0..3 {
            let ma = a.iter().map(|m| m[c]).sum::<f64>() / n;
            let mb = b.iter().map(|m| m[c]).sum::<f64>() / n;
            let va = a.iter().map(|m| (m[c] - ma).powi(2)).sum::<f64>() / (n - 1.0);
            let vb = b.iter().map(|m| (m[c] - mb).powi(2)).sum::<f64>() / (n - 1.0);
            let se = ((va + vb) / n).sqrt();
            if (ma - mb).abs() > 3.0 * se {
                separated = true;
            }
        }
        assert!(separated);
    }
}
