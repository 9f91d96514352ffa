//! The trainable bundle (detector plus both domain classifiers over one
//! parameter store) and its binary checkpoint format.
//!
//! Layout: the 8-byte magic `UADANCK1`, a little-endian `u64` header length,
//! a JSON header, then every parameter tensor followed by every momentum
//! buffer as little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::{ImageDomainClassifier, InstanceDomainClassifier};
use crate::detector::{DetectedObject, Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::seeding::{rng_for, Stream};
use crate::training::{Sgd, TrainConfig};
use crate::datagen::Image;

const MAGIC: &[u8; 8] = b"UADANCK1";

#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub detector: Detector,
    pub image_classifier: ImageDomainClassifier,
    pub instance_classifier: InstanceDomainClassifier,
}

impl Model {
    /// Registers and initializes every parameter from the seed's init stream.
    pub fn new(cfg: &DetectorConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, Stream::Init, 0);
        let mut store = ParamStore::default();
        let detector = Detector::register(cfg.clone(), &mut store, &mut rng)?;
        let image_classifier = ImageDomainClassifier::register(cfg, &mut store, &mut rng);
        let instance_classifier = InstanceDomainClassifier::register(cfg, &mut store, &mut rng);
        Ok(Self {
            store,
            detector,
            image_classifier,
            instance_classifier,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.detector.cfg
    }

    pub fn detect(&self, image: &Image, score_threshold: f64, nms_iou: f64) -> Result<Vec<DetectedObject>> {
        self.detector.detect(&self.store, image, score_threshold, nms_iou)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    config_hash: String,
    iteration: u64,
    tensors: Vec<TensorEntry>,
    has_momentum: bool,
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Number of completed iterations.
    pub iteration: u64,
    pub model: Model,
    pub optimizer: Option<Sgd>,
}

fn write_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let store = &self.model.store;
        let header = Header {
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            iteration: self.iteration,
            tensors: store
                .params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                })
                .collect(),
            has_momentum: self.optimizer.is_some(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &store.params {
            write_f64s(&mut out, &p.value);
        }
        if let Some(opt) = &self.optimizer {
            for v in &opt.velocity {
                write_f64s(&mut out, v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.config.hash() != header.config_hash {
            return Err(bad("config hash does not match the stored config"));
        }
        let mut model = Model::new(&header.config.detector, header.config.seed)?;
        if model.store.params.len() != header.tensors.len() {
            return Err(bad("tensor count does not match the model layout"));
        }
        let mut cursor = &bytes[16 + hlen..];
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            cursor.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        for (p, t) in model.store.params.iter_mut().zip(&header.tensors) {
            if p.name != t.name || p.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model slot {} {:?}",
                    t.name, t.shape, p.name, p.shape
                )));
            }
            p.value = read(p.value.len())?;
        }
        let optimizer = if header.has_momentum {
            let mut opt = Sgd::new(&model.store, header.config.momentum, header.config.weight_decay);
            for v in &mut opt.velocity {
                *v = read(v.len())?;
            }
            Some(opt)
        } else {
            None
        };
        if !cursor.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            config: header.config,
            config_hash: header.config_hash,
            iteration: header.iteration,
            model,
            optimizer,
        })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = tiny_config();
        let model = Model::new(&cfg.detector, cfg.seed).unwrap();
        let mut opt = Sgd::new(&model.store, cfg.momentum, cfg.weight_decay);
        opt.velocity[3][0] = -1.25e-300;
        opt.velocity[0][7] = f64::MIN_POSITIVE;
        let ck = Checkpoint {
            config_hash: cfg.hash(),
            config: cfg,
            iteration: 42,
            model,
            optimizer: Some(opt.clone()),
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.iteration, 42);
        assert_eq!(back.optimizer.as_ref().unwrap(), &opt);
        for (a, b) in back.model.store.params.iter().zip(&ck.model.store.params) {
            assert_eq!(a.name, b.name);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn tampered_header_is_rejected() {
        let cfg = tiny_config();
        let model = Model::new(&cfg.detector, cfg.seed).unwrap();
        let ck = Checkpoint {
            config_hash: "0".repeat(64),
            config: cfg,
            iteration: 0,
            model,
            optimizer: None,
        };
        assert!(matches!(Checkpoint::from_bytes(&ck.to_bytes()), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
    }

    #[test]
    fn truncated_data_is_rejected() {
        let cfg = tiny_config();
        let model = Model::new(&cfg.detector, cfg.seed).unwrap();
        let ck = Checkpoint {
            config_hash: cfg.hash(),
            config: cfg,
            iteration: 0,
            model,
            optimizer: None,
        };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
