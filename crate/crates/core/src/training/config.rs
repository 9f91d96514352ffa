use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mode::AblationMode;
use super::targets::DetLossConfig;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::uncertainty::{GateConfig, PatchReduction};

/// Two-phase step schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr1: f64,
    pub iters1: u64,
    pub lr2: f64,
    pub iters2: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr1: 1e-3,
            iters1: 5000,
            lr2: 1e-4,
            iters2: 2000,
        }
    }
}

impl LrSchedule {
    pub fn total(&self) -> u64 {
        self.iters1 + self.iters2
    }

    /// Learning rate for 0-based iteration `it`.
    pub fn lr_at(&self, it: u64) -> f64 {
        if it < self.iters1 {
            self.lr1
        } else {
            self.lr2
        }
    }

    /// Rescales both phases to a new total length, keeping their proportion.
    pub fn with_total(&self, total: u64) -> Self {
        let old = self.total().max(1);
        let iters1 = ((self.iters1 as u128 * total as u128) / old as u128) as u64;
        Self {
            iters1,
            iters2: total - iters1,
            ..*self
        }
    }
}

/// Dataset directories for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub source: PathBuf,
    pub target_train: PathBuf,
    pub target_eval: PathBuf,
}

impl DataPaths {
    /// The three standard split directories under `root`.
    pub fn under(root: &Path) -> Self {
        Self {
            source: root.join("source"),
            target_train: root.join("target_train"),
            target_eval: root.join("target_eval"),
        }
    }
}

impl Default for DataPaths {
    fn default() -> Self {
        Self::under(Path::new("data"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub xi: f64,
    pub grl_lambda: f64,
    pub seed: u64,
    pub mode: AblationMode,
    pub data: DataPaths,
    pub detector: DetectorConfig,
    pub loss: DetLossConfig,
    pub entropy_reduction: PatchReduction,
    /// Iterations between target evaluations and checkpoint refreshes.
    pub eval_every: u64,
    /// Iterations averaged into one history record.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: LrSchedule::default(),
            momentum: 0.9,
            weight_decay: 5e-4,
            xi: 0.5,
            grl_lambda: 1.0,
            seed: 0,
            mode: AblationMode::UaDAN,
            data: DataPaths::default(),
            detector: DetectorConfig::default(),
            loss: DetLossConfig::default(),
            entropy_reduction: PatchReduction::Mean,
            eval_every: 500,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn gate(&self) -> GateConfig {
        GateConfig { xi: self.xi }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(s.lr1) || !positive(s.lr2) || s.total() == 0 {
            return Err(Error::Config("learning rates must be positive and the schedule non-empty".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::Config(format!("xi must be finite and >= 0, got {}", self.xi)));
        }
        if !(self.grl_lambda >= 0.0 && self.grl_lambda.is_finite()) {
            return Err(Error::Config("grl_lambda must be finite and >= 0".into()));
        }
        if self.eval_every == 0 || self.log_every == 0 {
            return Err(Error::Config("eval_every and log_every must be positive".into()));
        }
        self.detector.validate()?;
        self.loss.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a `.json` or `.toml` file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Hex SHA-256 of any serializable value's JSON encoding.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_phases() {
        let s = LrSchedule::default();
        assert_eq!(s.total(), 7000);
        assert_eq!(s.lr_at(4999), 1e-3);
        assert_eq!(s.lr_at(5000), 1e-4);
        let short = s.with_total(700);
        assert_eq!((short.iters1, short.iters2), (500, 200));
    }

    #[test]
    fn toml_partial_config() {
        let cfg = TrainConfig::from_toml_str("xi = 0.25\nmode = \"UaDAN_noUgCL\"\n[schedule]\nlr1 = 0.01\niters1 = 10\nlr2 = 0.001\niters2 = 5\n").unwrap();
        assert_eq!(cfg.xi, 0.25);
        assert_eq!(cfg.mode, AblationMode::UaDANNoUgCL);
        assert_eq!(cfg.schedule.total(), 15);
        assert_eq!(cfg.momentum, 0.9);
        cfg.validate().unwrap();
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_negative_xi() {
        let cfg = TrainConfig {
            xi: -0.1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
