use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use super::{BoxLabel, Dataset, DatasetConfig, DetectionSample, Domain, Image};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub domain: Domain,
    pub seed: u64,
    /// Present only for source samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<BoxLabel>>,
    /// Target ground truth, reserved for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_labels: Option<Vec<BoxLabel>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub samples: Vec<ManifestEntry>,
}

/// Writes one PNG per sample plus `manifest.json` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for (i, (sample, seed)) in ds.samples.iter().zip(&ds.sample_seeds).enumerate() {
        let file = format!("{i:06}.png");
        let img = &sample.image;
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
            img.width as u32,
            img.height as u32,
            img.data.iter().map(|v| (v * 255.0).round() as u8).collect(),
        )
        .expect("buffer size matches image dimensions");
        buf.save(dir.join(&file))?;
        let truth = ds.quarantined[i].clone();
        let (labels, eval_labels) = match ds.config.domain {
            Domain::Source => (Some(truth), None),
            Domain::Target => (None, Some(truth)),
        };
        entries.push(ManifestEntry {
            file,
            domain: sample.domain,
            seed: *seed,
            labels,
            eval_labels,
        });
    }
    let manifest = Manifest {
        config: ds.config.clone(),
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    let cfg = manifest.config;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    let mut seeds = Vec::with_capacity(manifest.samples.len());
    let mut truth = Vec::with_capacity(manifest.samples.len());
    for entry in manifest.samples {
        let rgb = image::open(dir.join(&entry.file))?.to_rgb8();
        if rgb.height() as usize != cfg.height || rgb.width() as usize != cfg.width {
            return Err(Error::Config(format!(
                "{}: image is {}x{}, manifest says {}x{}",
                entry.file,
                rgb.height(),
                rgb.width(),
                cfg.height,
                cfg.width
            )));
        }
        let image = Image {
            height: cfg.height,
            width: cfg.width,
            data: rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        };
        let labels = match entry.domain {
            Domain::Source => entry.labels.clone(),
            Domain::Target => None,
        };
        truth.push(entry.labels.or(entry.eval_labels).unwrap_or_default());
        samples.push(DetectionSample {
            image,
            domain: entry.domain,
            labels,
        });
        seeds.push(entry.seed);
    }
    Ok(Dataset::from_parts(cfg, samples, seeds, truth))
}
