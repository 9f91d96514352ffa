//! Supervised detection loss, the single-pass adversarial training step, and
//! the full training run with periodic evaluation, checkpoints and resume.
//!
//! All randomness inside a run is keyed by `(seed, stream, iteration)`, so a
//! run resumed from any checkpoint replays exactly what an uninterrupted run
//! would have done.

mod config;
mod mode;
mod optim;
mod targets;

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{hash_json, DataPaths, LrSchedule, TrainConfig};
pub use mode::AblationMode;
pub use optim::Sgd;
pub use targets::{
    detection_loss, match_anchors, match_rois, rcnn_loss_graph, rpn_loss_graph, AnchorTargets, DetLossConfig, DetectionLoss,
    RoiTargets,
};

use crate::adaptation::{adversarial_graph, SOURCE_LABEL, TARGET_LABEL, total_loss, ImageTerm, InstanceTerm, LossBreakdown, LossComponents};
use crate::autograd::{softmax, Graph, Var};
use crate::datagen::{load_dataset, Dataset, DetectionSample, Domain, Image};
use crate::detector::{InstanceOutputs, ProposalMap};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, write_json, DetectionsFile, EvalResult};
use crate::geometry::BBox;
use crate::model::{Checkpoint, Model};
use crate::seeding::{rng_for, Stream};
use crate::uncertainty::{categorical_entropy, gate, instance_proposal_entropy, proposal_entropy_map};

/// Result of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    #[serde(flatten)]
    pub breakdown: LossBreakdown,
    pub components: LossComponents,
    pub rpn: f64,
    pub rcnn: f64,
    /// Share of target proposals whose instance entropy passed the gate, when
    /// the curriculum term is active.
    pub gate_open: Option<f64>,
}

/// The loss tape of one step, ready for [`Graph::backward`].
pub struct StepGraph {
    pub graph: Graph,
    pub root: Var,
    pub output: StepOutput,
}

fn class_entropies(g: &Graph, inst: &InstanceOutputs, classes: usize) -> Result<Vec<f64>> {
    g.value(inst.class_logits)
        .chunks(classes + 1)
        .map(|row| categorical_entropy(&softmax(row)))
        .collect()
}

struct Side {
    pm: ProposalMap,
    proposals: Vec<BBox>,
    inst: Option<InstanceOutputs>,
}

/// Per-proposal weights of the instance term for one domain.
fn instance_weights(model: &Model, cfg: &TrainConfig, g: &Graph, side: &Side, term: InstanceTerm, open: &mut (usize, usize)) -> Result<Vec<f64>> {
    let det = &model.detector;
    let inst = side.inst.as_ref().expect("instance outputs built");
    Ok(match term {
        InstanceTerm::None => Vec::new(),
        InstanceTerm::Uniform => vec![1.0; side.proposals.len()],
        InstanceTerm::Entropy => class_entropies(g, inst, det.cfg.classes)?,
        InstanceTerm::Curriculum => {
            let ed = class_entropies(g, inst, det.cfg.classes)?;
            let em = proposal_entropy_map(&side.pm);
            let gate_cfg = cfg.gate();
            let mut w = Vec::with_capacity(ed.len());
            for (b, e) in side.proposals.iter().zip(ed) {
                let e_ins = instance_proposal_entropy(&em, b, det.cfg.stride() as f64, det.cfg.roi_size, cfg.entropy_reduction)?;
                open.0 += (e_ins < gate_cfg.xi) as usize;
                open.1 += 1;
                w.push(gate(e, e_ins, gate_cfg));
            }
            w
        }
    })
}

/// Builds the full loss of one iteration on a fresh tape.
pub fn build_step(
    model: &Model,
    source: &DetectionSample,
    target: Option<&DetectionSample>,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<StepGraph> {
    if source.domain != Domain::Source {
        return Err(Error::Config("the first training image must come from the source domain".into()));
    }
    let labels = source.labels.as_deref().ok_or(Error::MissingLabels)?;
    let det = &model.detector;
    let store = &model.store;
    let r = det.cfg.anchor_sizes.len();
    let mut sampling = rng_for(cfg.seed, Stream::Sampling, iteration);
    let mut dropout = rng_for(cfg.seed, Stream::Dropout, iteration);
    let mut g = Graph::new();

    let out_s = det.forward_image(store, &mut g, &source.image)?;
    let pm_s = det.proposal_map(&g, &out_s);
    let props_s: Vec<BBox> = det.select(&pm_s, det.cfg.train_proposals).iter().map(|p| p.bbox).collect();
    let gt: Vec<BBox> = labels.iter().map(|l| l.bbox).collect();
    let at = match_anchors(det.anchors(), &gt, &cfg.loss, &mut sampling);
    let rois: Vec<BBox> = props_s.iter().chain(&gt).copied().collect();
    let rt = match_rois(&rois, labels, &cfg.loss, &mut sampling);
    let beta = cfg.loss.smooth_l1_beta;
    let rpn = rpn_loss_graph(&mut g, out_s.objectness_logits, out_s.deltas, r, &at, beta);
    let prop_inst = if props_s.is_empty() {
        None
    } else {
        Some(det.instance_graph(store, &mut g, out_s.features, &props_s)?)
    };
    let mut blocks = Vec::new();
    if let Some(p) = &prop_inst {
        blocks.push((p.class_logits, p.deltas, 0, props_s.len()));
    }
    if !gt.is_empty() {
        let gt_inst = det.instance_graph(store, &mut g, out_s.features, &gt)?;
        blocks.push((gt_inst.class_logits, gt_inst.deltas, props_s.len(), gt.len()));
    }
    let rcnn = rcnn_loss_graph(&mut g, &blocks, det.cfg.classes + 1, &rt, beta);
    let (rpn_value, rcnn_value) = (g.scalar(rpn), g.scalar(rcnn));
    let mut comps = LossComponents {
        det: rpn_value + rcnn_value,
        ..Default::default()
    };
    let mut terms = vec![rpn, rcnn];
    let mut gate_open = None;

    let (img_term, ins_term) = (cfg.mode.image_term(), cfg.mode.instance_term());
    if cfg.mode.uses_target() {
        let target = target.ok_or_else(|| Error::Config(format!("mode {} needs a target image", cfg.mode)))?;
        if target.domain != Domain::Target || target.labels.is_some() {
            return Err(Error::Config("the second training image must be an unlabelled target image".into()));
        }
        let out_t = det.forward_image(store, &mut g, &target.image)?;
        let pm_t = det.proposal_map(&g, &out_t);
        let lambda = cfg.grl_lambda;

        if img_term != ImageTerm::None {
            let fs = g.grl(out_s.features, lambda);
            let ft = g.grl(out_t.features, lambda);
            let ls = model.image_classifier.logits(store, &mut g, fs)?;
            let lt = model.image_classifier.logits(store, &mut g, ft)?;
            let (ws, wt) = match img_term {
                ImageTerm::Uniform => (vec![1.0; g.value(ls).len()], vec![1.0; g.value(lt).len()]),
                _ => (proposal_entropy_map(&pm_s).data, proposal_entropy_map(&pm_t).data),
            };
            let v = adversarial_graph(&mut g, ls, ws, lt, wt);
            match img_term {
                ImageTerm::Uniform => comps.img_tda = g.scalar(v),
                _ => comps.img_ua = g.scalar(v),
            }
            terms.push(v);
        }

        if ins_term != InstanceTerm::None {
            let props_t: Vec<BBox> = det.select(&pm_t, det.cfg.train_proposals).iter().map(|p| p.bbox).collect();
            let inst_t = if props_t.is_empty() {
                None
            } else {
                Some(det.instance_graph(store, &mut g, out_t.features, &props_t)?)
            };
            let side_s = Side {
                pm: pm_s,
                proposals: props_s,
                inst: prop_inst,
            };
            let side_t = Side {
                pm: pm_t,
                proposals: props_t,
                inst: inst_t,
            };
            let mut open = (0usize, 0usize);
            let mut parts = Vec::new();
            for (side, label) in [(&side_s, SOURCE_LABEL), (&side_t, TARGET_LABEL)] {
                let Some(inst) = side.inst else { continue };
                let mut ignore = (0, 0);
                let counter = if label == TARGET_LABEL { &mut open } else { &mut ignore };
                let w = instance_weights(model, cfg, &g, side, ins_term, counter)?;
                let f = g.grl(inst.features, lambda);
                let z = model.instance_classifier.logits(store, &mut g, f, Some(&mut dropout))?;
                let n = w.len();
                parts.push(g.weighted_bce(z, (0..n).collect(), label, w));
            }
            let v = g.sum(parts);
            let value = g.scalar(v);
            match ins_term {
                InstanceTerm::Uniform => comps.ins_tda = value,
                InstanceTerm::Entropy => comps.ins_ua = value,
                _ => {
                    comps.ins_ug = value;
                    gate_open = Some(if open.1 == 0 { 0.0 } else { open.0 as f64 / open.1 as f64 });
                }
            }
            terms.push(v);
        }
    }

    let root = g.sum(terms);
    let breakdown = total_loss(cfg.mode, &comps);
    if !breakdown.total.is_finite() || !g.scalar(root).is_finite() {
        return Err(Error::NonFinite {
            iteration,
            detail: format!("{breakdown:?}"),
        });
    }
    Ok(StepGraph {
        graph: g,
        root,
        output: StepOutput {
            breakdown,
            components: comps,
            rpn: rpn_value,
            rcnn: rcnn_value,
            gate_open,
        },
    })
}

/// One SGD step on one source and (for adaptive modes) one target image.
pub fn train_step(
    model: &mut Model,
    opt: &mut Sgd,
    source: &DetectionSample,
    target: Option<&DetectionSample>,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<StepOutput> {
    let step = build_step(model, source, target, cfg, iteration)?;
    let grads = step.graph.backward(step.root, model.store.len());
    opt.step(&mut model.store, &grads, cfg.schedule.lr_at(iteration));
    Ok(step.output)
}

/// The three splits a run reads.
#[derive(Debug)]
pub struct TrainData {
    pub source: Dataset,
    pub target_train: Dataset,
    pub target_eval: Dataset,
}

impl TrainData {
    pub fn load(paths: &DataPaths) -> Result<Self> {
        Ok(Self {
            source: load_dataset(&paths.source)?,
            target_train: load_dataset(&paths.target_train)?,
            target_eval: load_dataset(&paths.target_eval)?,
        })
    }

    /// Rejects splits whose domain, image size or class count disagree with
    /// the run configuration.
    pub fn check(&self, cfg: &TrainConfig) -> Result<()> {
        let d = &cfg.detector;
        for (name, ds, domain) in [
            ("source", &self.source, Domain::Source),
            ("target_train", &self.target_train, Domain::Target),
            ("target_eval", &self.target_eval, Domain::Target),
        ] {
            let c = &ds.config;
            if ds.is_empty() {
                return Err(Error::Config(format!("{name} split is empty")));
            }
            if c.domain != domain {
                return Err(Error::Config(format!("{name} split has domain {:?}", c.domain)));
            }
            if (c.height, c.width) != (d.height, d.width) || c.classes != d.classes {
                return Err(Error::Config(format!(
                    "{name} split is {}x{} with {} classes, detector expects {}x{} with {}",
                    c.height, c.width, c.classes, d.height, d.width, d.classes
                )));
            }
        }
        Ok(())
    }
}

/// Sample index for iteration `it` under a fresh permutation every epoch.
struct EpochOrder {
    n: usize,
    seed: u64,
    lane: u64,
    epoch: Option<u64>,
    perm: Vec<usize>,
}

impl EpochOrder {
    fn new(n: usize, seed: u64, lane: u64) -> Self {
        Self {
            n,
            seed,
            lane,
            epoch: None,
            perm: Vec::new(),
        }
    }

    fn at(&mut self, it: u64) -> usize {
        let epoch = it / self.n as u64;
        if self.epoch != Some(epoch) {
            self.perm = (0..self.n).collect();
            self.perm.shuffle(&mut rng_for(self.seed, Stream::Order, epoch * 2 + self.lane));
            self.epoch = Some(epoch);
        }
        self.perm[(it % self.n as u64) as usize]
    }
}

/// One line of the training history: losses averaged over the iterations
/// since the previous record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    /// Completed iterations.
    pub iteration: u64,
    #[serde(rename = "L_det")]
    pub det: f64,
    #[serde(rename = "L_img")]
    pub img: f64,
    #[serde(rename = "L_ins")]
    pub ins: f64,
    pub total: f64,
    /// Largest absolute instance loss of any single step in the interval.
    #[serde(rename = "L_ins_max_abs")]
    pub ins_max_abs: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gate_open: Option<f64>,
    #[serde(rename = "mAP", skip_serializing_if = "Option::is_none", default)]
    pub map: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { records })
    }

    /// Training loss of the record covering iteration `it`.
    pub fn total_at(&self, it: u64) -> Option<f64> {
        self.records.iter().find(|r| r.iteration >= it).map(|r| r.total)
    }
}

#[derive(Default)]
struct Accum {
    n: u64,
    det: f64,
    img: f64,
    ins: f64,
    total: f64,
    ins_max: f64,
    gate: f64,
    gate_n: u64,
}

impl Accum {
    fn add(&mut self, s: &StepOutput) {
        let b = &s.breakdown;
        self.n += 1;
        self.det += b.det;
        self.img += b.img;
        self.ins += b.ins;
        self.total += b.total;
        self.ins_max = self.ins_max.max(b.ins.abs());
        if let Some(gv) = s.gate_open {
            self.gate += gv;
            self.gate_n += 1;
        }
    }

    fn flush(&mut self, iteration: u64, lr: f64) -> HistoryRecord {
        let n = self.n.max(1) as f64;
        let r = HistoryRecord {
            iteration,
            det: self.det / n,
            img: self.img / n,
            ins: self.ins / n,
            total: self.total / n,
            ins_max_abs: self.ins_max,
            lr,
            gate_open: (self.gate_n > 0).then(|| self.gate / self.gate_n as f64),
            map: None,
        };
        *self = Self::default();
        r
    }
}

/// Where and how a run persists its artefacts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Continue from `checkpoints/last.ckpt` when present.
    pub resume: bool,
    /// Evaluate on the held-out target split at every checkpoint interval.
    pub periodic_eval: bool,
    /// Checkpoint after this many total iterations and return
    /// [`Error::Interrupted`], leaving the run resumable. Must fall on a
    /// history record boundary.
    pub stop_after: Option<u64>,
}

/// Metrics written next to a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: AblationMode,
    pub xi: f64,
    pub iterations: u64,
    #[serde(rename = "final")]
    pub final_eval: EvalResult,
    pub best_iteration: Option<u64>,
    #[serde(rename = "best_mAP")]
    pub best_map: Option<f64>,
    /// Largest absolute per-step instance loss over the whole run.
    #[serde(rename = "L_ins_max_abs")]
    pub ins_max_abs: f64,
    /// Ground-truth reads on the unlabelled training split during the run.
    pub target_train_label_reads: usize,
    pub config: TrainConfig,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub summary: RunSummary,
    /// Final-model detections on the held-out target split.
    pub detections: DetectionsFile,
}

/// Run identifier derived from mode, gate threshold and seed.
pub fn run_id(cfg: &TrainConfig) -> String {
    format!("{}_xi{}_s{}", cfg.mode, cfg.xi, cfg.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct BestMarker {
    iteration: u64,
    #[serde(rename = "mAP")]
    map: f64,
}

fn eval_split(model: &Model, ds: &Dataset) -> Result<(EvalResult, DetectionsFile)> {
    let images: Vec<&Image> = ds.samples.iter().map(|s| &s.image).collect();
    let (res, dets) = evaluate(model, &images, ds.eval_labels())?;
    Ok((res, DetectionsFile { images: dets }))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

pub const HISTORY_FILE: &str = "history.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const CONFIG_FILE: &str = "config.json";

/// Paths of a run's checkpoints inside its output directory.
pub fn checkpoint_path(out_dir: &Path, which: &str) -> PathBuf {
    out_dir.join("checkpoints").join(format!("{which}.ckpt"))
}

/// Trains from scratch (or resumes) for the configured schedule.
///
/// Training reads source labels through the samples and never touches the
/// ground truth of either target split. Evaluation at checkpoint intervals
/// reads the held-out split's labels through its counted accessor.
pub fn train(cfg: &TrainConfig, data: &TrainData, opts: &RunOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check(cfg)?;
    if let Some(n) = opts.stop_after {
        if n % cfg.log_every != 0 {
            return Err(Error::Config(format!("stop_after {n} is not a multiple of log_every {}", cfg.log_every)));
        }
    }
    let reads_before = data.target_train.label_reads();
    let total = cfg.schedule.total();
    let hash = cfg.hash();

    let mut model = Model::new(&cfg.detector, cfg.seed)?;
    let mut opt = Sgd::new(&model.store, cfg.momentum, cfg.weight_decay);
    let mut start = 0;
    let mut history = TrainHistory::default();
    let mut best: Option<BestMarker> = None;

    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let last = checkpoint_path(dir, "last");
        if opts.resume && last.exists() {
            let ck = Checkpoint::load(&last)?;
            if ck.config_hash != hash {
                return Err(Error::Checkpoint(format!(
                    "{} was written by config {}, current config is {}",
                    last.display(),
                    ck.config_hash,
                    hash
                )));
            }
            start = ck.iteration;
            model = ck.model;
            opt = ck.optimizer.ok_or_else(|| Error::Checkpoint("resume checkpoint lacks momentum buffers".into()))?;
            let hpath = dir.join(HISTORY_FILE);
            if hpath.exists() {
                history = TrainHistory::load_jsonl(&hpath)?;
                history.records.retain(|r| r.iteration <= start);
            }
            let bpath = dir.join("best.json");
            if bpath.exists() {
                let text = fs::read_to_string(&bpath).map_err(|e| Error::io(&bpath, e))?;
                let marker: BestMarker = serde_json::from_str(&text)?;
                best = (marker.iteration <= start).then_some(marker);
            }
        }
        fs::write(dir.join(HISTORY_FILE), history.to_jsonl()).map_err(|e| Error::io(dir.join(HISTORY_FILE), e))?;
        write_json(&dir.join(CONFIG_FILE), cfg)?;
    }

    let mut src_order = EpochOrder::new(data.source.len(), cfg.seed, 0);
    let mut tgt_order = EpochOrder::new(data.target_train.len(), cfg.seed, 1);
    let mut acc = Accum::default();
    let mut ins_max_abs = history.records.iter().map(|r| r.ins_max_abs).fold(0.0, f64::max);
    let mut last_eval: Option<(EvalResult, DetectionsFile)> = None;

    for it in start..total {
        let s = &data.source.samples[src_order.at(it)];
        let t = cfg.mode.uses_target().then(|| &data.target_train.samples[tgt_order.at(it)]);
        let out = train_step(&mut model, &mut opt, s, t, cfg, it)?;
        acc.add(&out);
        ins_max_abs = ins_max_abs.max(out.breakdown.ins.abs());
        let done = it + 1;
        let eval_point = done % cfg.eval_every == 0 || done == total;
        if done % cfg.log_every == 0 || eval_point {
            let mut rec = acc.flush(done, cfg.schedule.lr_at(it));
            if eval_point {
                if opts.periodic_eval || done == total {
                    let ev = eval_split(&model, &data.target_eval)?;
                    rec.map = Some(ev.0.map);
                    if best.is_none_or(|b| ev.0.map > b.map) {
                        best = Some(BestMarker {
                            iteration: done,
                            map: ev.0.map,
                        });
                        if let Some(dir) = &opts.out_dir {
                            snapshot(cfg, &hash, done, &model, None).save(&checkpoint_path(dir, "best"))?;
                            write_json(&dir.join("best.json"), &best)?;
                        }
                    }
                    last_eval = Some(ev);
                }
                if let Some(dir) = &opts.out_dir {
                    snapshot(cfg, &hash, done, &model, Some(&opt)).save(&checkpoint_path(dir, "last"))?;
                }
            }
            if let Some(dir) = &opts.out_dir {
                append_line(&dir.join(HISTORY_FILE), &(serde_json::to_string(&rec)? + "\n"))?;
            }
            history.records.push(rec);
        }
        if opts.stop_after == Some(done) && done < total {
            if let Some(dir) = &opts.out_dir {
                snapshot(cfg, &hash, done, &model, Some(&opt)).save(&checkpoint_path(dir, "last"))?;
            }
            return Err(Error::Interrupted { iteration: done });
        }
    }

    let (final_eval, detections) = match last_eval {
        Some(ev) => ev,
        None => eval_split(&model, &data.target_eval)?,
    };
    let checkpoint = snapshot(cfg, &hash, total, &model, Some(&opt));
    let summary = RunSummary {
        run_id: run_id(cfg),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash.clone(),
        seed: cfg.seed,
        mode: cfg.mode,
        xi: cfg.xi,
        iterations: total,
        final_eval,
        best_iteration: best.map(|b| b.iteration),
        best_map: best.map(|b| b.map),
        ins_max_abs,
        target_train_label_reads: data.target_train.label_reads() - reads_before,
        config: cfg.clone(),
    };
    if let Some(dir) = &opts.out_dir {
        checkpoint.save(&checkpoint_path(dir, "final"))?;
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
        detections.save(&dir.join(DETECTIONS_FILE))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        history,
        summary,
        detections,
    })
}

fn snapshot(cfg: &TrainConfig, hash: &str, iteration: u64, model: &Model, opt: Option<&Sgd>) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        config_hash: hash.to_string(),
        iteration,
        model: model.clone(),
        optimizer: opt.cloned(),
    }
}

/// Loads the datasets named in the config and trains.
pub fn train_from_config(cfg: &TrainConfig, opts: &RunOptions) -> Result<TrainOutcome> {
    let data = TrainData::load(&cfg.data)?;
    train(cfg, &data, opts)
}
