//! Experiment specification, the ablation grid and the gate-threshold sweep.
//!
//! Grid cells call [`train`] exactly as a single run does. Each cell writes to
//! its own directory under `runs/`, and a cell whose directory already holds
//! a summary for the same config hash is read back instead of retrained.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::BenchmarkConfig;
use crate::error::{Error, Result};
use crate::evaluation::write_json;
use crate::training::{run_id, train, AblationMode, DataPaths, RunOptions, RunSummary, TrainConfig, TrainData, SUMMARY_FILE};

/// Default gate thresholds of the sweep.
pub const DEFAULT_XI_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// One config file's worth of experiment: data, training and grid settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub benchmark: BenchmarkConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub xi_values: Vec<f64>,
    /// Dataset root; relative paths resolve against the output root.
    pub data_dir: PathBuf,
    /// Evaluate on the held-out target split at each checkpoint interval.
    pub periodic_eval: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            xi_values: DEFAULT_XI_GRID.to_vec(),
            data_dir: PathBuf::from("data"),
            periodic_eval: true,
        }
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.xi_values.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("xi values must be finite and >= 0".into()));
        }
        let b = &self.benchmark;
        let d = &self.train.detector;
        if (b.height, b.width, b.classes) != (d.height, d.width, d.classes) {
            return Err(Error::Config("benchmark image size or class count disagrees with the detector".into()));
        }
        Ok(())
    }

    /// Dataset root under `out_root`, unless `data_dir` is absolute.
    pub fn data_root(&self, out_root: &Path) -> PathBuf {
        out_root.join(&self.data_dir)
    }

    /// Training config for one grid cell, pointing at the generated data.
    pub fn cell_config(&self, out_root: &Path, mode: AblationMode, xi: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            xi,
            seed,
            data: DataPaths::under(&self.data_root(out_root)),
            ..self.train.clone()
        }
    }
}

/// Trains one cell under `out_root/runs/<run id>`, reusing a finished run
/// with the same config hash.
pub fn run_cell(cfg: &TrainConfig, data: &TrainData, out_root: &Path, periodic_eval: bool) -> Result<RunSummary> {
    let dir = out_root.join("runs").join(run_id(cfg));
    let summary_path = dir.join(SUMMARY_FILE);
    if summary_path.exists() {
        let text = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let s: RunSummary = serde_json::from_str(&text)?;
        if s.config_hash == cfg.hash() {
            log::info!("reusing finished run {}", dir.display());
            return Ok(s);
        }
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let opts = RunOptions {
        out_dir: Some(dir),
        resume: true,
        periodic_eval,
        ..Default::default()
    };
    Ok(train(cfg, data, &opts)?.summary)
}

/// Median, mean and sample standard deviation of a non-empty list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn stats(xs: &[f64]) -> Option<Stats> {
    if xs.is_empty() {
        return None;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let mean = s.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Stats { median, mean, std })
}

/// mAP of every seed of one grid row, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub maps: BTreeMap<u64, f64>,
    pub failures: BTreeMap<u64, String>,
    pub stats: Option<Stats>,
}

impl GridRow {
    fn new(label: String) -> Self {
        Self {
            label,
            maps: BTreeMap::new(),
            failures: BTreeMap::new(),
            stats: None,
        }
    }

    fn finish(&mut self) {
        self.stats = stats(&self.maps.values().copied().collect::<Vec<_>>());
    }

    fn record(&mut self, seed: u64, result: Result<RunSummary>) -> Option<RunSummary> {
        match result {
            Ok(s) => {
                self.maps.insert(seed, 100.0 * s.final_eval.map);
                Some(s)
            }
            Err(e) => {
                log::error!("{} seed {seed} failed: {e}", self.label);
                self.failures.insert(seed, e.to_string());
                None
            }
        }
    }

    pub fn median(&self) -> Option<f64> {
        self.stats.map(|s| s.median)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub title: String,
    pub rows: Vec<GridRow>,
    pub seeds: Vec<u64>,
    /// Free-form notes printed under the table.
    pub notes: Vec<String>,
}

impl GridTable {
    pub fn row(&self, label: &str) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for s in &self.seeds {
            let _ = write!(out, ",seed_{s}");
        }
        out.push_str(",median,mean,std,failures\n");
        for r in &self.rows {
            out.push_str(&r.label);
            for s in &self.seeds {
                match r.maps.get(s) {
                    Some(v) => {
                        let _ = write!(out, ",{v:.4}");
                    }
                    None => out.push(','),
                }
            }
            match r.stats {
                Some(st) => {
                    let _ = write!(out, ",{:.4},{:.4},{:.4}", st.median, st.mean, st.std);
                }
                None => out.push_str(",,,"),
            }
            let _ = writeln!(out, ",{}", r.failures.len());
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!("{}\n", self.title);
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(4).max(4);
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>14}  runs", "row", "median", "mean ± std");
        for r in &self.rows {
            let (med, ms) = match r.stats {
                Some(s) => (format!("{:.2}", s.median), format!("{:.2} ± {:.2}", s.mean, s.std)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(out, "{:<width$}  {med:>8}  {ms:>14}  {}/{}", r.label, r.maps.len(), self.seeds.len());
        }
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        out
    }

    /// Writes `<stem>.csv`, `<stem>.txt` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.render()).map_err(|e| Error::io(&txt, e))?;
        write_json(&dir.join(format!("{stem}.json")), self)
    }
}

/// All seven modes over every seed.
pub fn ablate(spec: &ExperimentSpec, data: &TrainData, out_root: &Path) -> Result<GridTable> {
    spec.validate()?;
    let mut rows = Vec::new();
    for mode in AblationMode::ALL {
        let mut row = GridRow::new(mode.name().to_string());
        for &seed in &spec.seeds {
            let cfg = spec.cell_config(out_root, mode, spec.train.xi, seed);
            row.record(seed, run_cell(&cfg, data, out_root, spec.periodic_eval));
        }
        row.finish();
        rows.push(row);
    }
    Ok(GridTable {
        title: "target mAP (%) per ablation mode".into(),
        rows,
        seeds: spec.seeds.clone(),
        notes: Vec::new(),
    })
}

/// The full method at every gate threshold over every seed.
pub fn sweep_xi(spec: &ExperimentSpec, xi_values: &[f64], data: &TrainData, out_root: &Path) -> Result<GridTable> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for &xi in xi_values {
        let mut row = GridRow::new(format!("xi={xi}"));
        let mut max_ins: f64 = 0.0;
        for &seed in &spec.seeds {
            let cfg = spec.cell_config(out_root, AblationMode::UaDAN, xi, seed);
            if let Some(s) = row.record(seed, run_cell(&cfg, data, out_root, spec.periodic_eval)) {
                max_ins = max_ins.max(s.ins_max_abs);
            }
        }
        if xi == 0.0 {
            notes.push(format!(
                "xi=0: largest per-step instance loss over all seeds = {max_ins} ({})",
                if max_ins == 0.0 { "identically zero" } else { "NOT zero" }
            ));
        }
        row.finish();
        rows.push(row);
    }
    Ok(GridTable {
        title: "target mAP (%) per gate threshold xi".into(),
        rows,
        seeds: spec.seeds.clone(),
        notes,
    })
}

/// For each seed, the threshold with the highest mAP (first on ties).
pub fn best_xi_per_seed(table: &GridTable, xi_values: &[f64]) -> BTreeMap<u64, f64> {
    let mut out = BTreeMap::new();
    for &seed in &table.seeds {
        let mut best: Option<(f64, f64)> = None;
        for (row, &xi) in table.rows.iter().zip(xi_values) {
            if let Some(&m) = row.maps.get(&seed) {
                if best.is_none_or(|(bm, _)| m > bm) {
                    best = Some((m, xi));
                }
            }
        }
        if let Some((_, xi)) = best {
            out.insert(seed, xi);
        }
    }
    out
}
