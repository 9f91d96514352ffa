//! Detection metrics, cross-run error analysis and feature-space variance.
//!
//! Every comparison between two models routes through [`match_detections`],
//! so the same matching rule scores each side.

mod ap;
mod variance;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ap::{ap_from_curve, average_precision, detection_order, match_detections, pr_curve, MatchResult, ScoredBox};
pub use variance::{class_variance, sample_per_class, VarianceReport};

use crate::datagen::{BoxLabel, Image};
use crate::detector::DetectedObject;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::Model;

/// IoU threshold for a true positive.
pub const EVAL_IOU: f64 = 0.5;
/// Minimum score a detection needs to enter the AP computation.
pub const COLLECT_SCORE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// AP per class id, for classes with ground truth or detections.
    pub per_class_ap: BTreeMap<usize, f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub counts: BTreeMap<usize, ClassCounts>,
}

fn class_inputs(dets: &[Vec<DetectedObject>], gt: &[Vec<BoxLabel>], class: usize) -> (Vec<ScoredBox>, Vec<Vec<BBox>>) {
    let scored = dets
        .iter()
        .enumerate()
        .flat_map(|(image, ds)| {
            ds.iter().filter(|d| d.class_id == class).map(move |d| ScoredBox {
                image,
                score: d.score,
                bbox: d.bbox,
            })
        })
        .collect();
    let boxes = gt
        .iter()
        .map(|ls| ls.iter().filter(|l| l.class_id == class).map(|l| l.bbox).collect())
        .collect();
    (scored, boxes)
}

/// Scores per-image detection lists against per-image ground truth.
pub fn evaluate_detections(dets: &[Vec<DetectedObject>], gt: &[Vec<BoxLabel>], classes: usize) -> Result<EvalResult> {
    if dets.len() != gt.len() {
        return Err(Error::GroundTruthMismatch(format!(
            "{} detection lists for {} images",
            dets.len(),
            gt.len()
        )));
    }
    let mut per_class_ap = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut present = Vec::new();
    for c in 1..=classes {
        let (scored, boxes) = class_inputs(dets, gt, c);
        let n_gt: usize = boxes.iter().map(Vec::len).sum();
        let m = match_detections(&scored, &boxes, EVAL_IOU);
        let tp = m.is_tp.iter().filter(|&&t| t).count();
        counts.insert(
            c,
            ClassCounts {
                gt: n_gt,
                tp,
                fp: scored.len() - tp,
                fn_: n_gt - tp,
            },
        );
        if let Some(ap) = average_precision(&scored, &boxes, EVAL_IOU) {
            per_class_ap.insert(c, ap);
            if n_gt > 0 {
                present.push(ap);
            }
        }
    }
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(EvalResult {
        per_class_ap,
        map,
        counts,
    })
}

/// `(recall, precision)` curve of every class with ground truth.
pub fn pr_curves(dets: &[Vec<DetectedObject>], gt: &[Vec<BoxLabel>], classes: usize) -> BTreeMap<usize, Vec<(f64, f64)>> {
    let mut out = BTreeMap::new();
    for c in 1..=classes {
        let (scored, boxes) = class_inputs(dets, gt, c);
        let n_gt: usize = boxes.iter().map(Vec::len).sum();
        if n_gt > 0 {
            out.insert(c, pr_curve(&match_detections(&scored, &boxes, EVAL_IOU), n_gt));
        }
    }
    out
}

/// Runs the model over `images` at the collection threshold.
pub fn detect_all(model: &Model, images: &[&Image]) -> Result<Vec<Vec<DetectedObject>>> {
    images
        .iter()
        .map(|im| model.detect(im, COLLECT_SCORE_THRESHOLD, crate::detector::DETECTION_NMS_IOU))
        .collect()
}

/// Detects on every image and scores against `gt`.
pub fn evaluate(model: &Model, images: &[&Image], gt: &[Vec<BoxLabel>]) -> Result<(EvalResult, Vec<Vec<DetectedObject>>)> {
    let dets = detect_all(model, images)?;
    let res = evaluate_detections(&dets, gt, model.config().classes)?;
    Ok((res, dets))
}

/// Per-image detections, the interchange format between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub images: Vec<Vec<DetectedObject>>,
}

impl DetectionsFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Keeps only detections scoring at least `threshold`.
    pub fn above(&self, threshold: f64) -> Vec<Vec<DetectedObject>> {
        self.images
            .iter()
            .map(|ds| ds.iter().filter(|d| d.score >= threshold).copied().collect())
            .collect()
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysis {
    /// Share of objects missed by the reference run that the adapted run finds.
    pub recovered_tp_rate: f64,
    /// Share of objects found by the reference run that the adapted run misses.
    pub induced_fn_rate: f64,
    pub recovered_count: usize,
    pub induced_count: usize,
    pub both_matched: usize,
    pub source_only_matched: usize,
    pub adapted_matched: usize,
    pub source_only_missed: usize,
    pub total_gt: usize,
    /// Set when a rate's denominator was zero and the rate was reported as 0.
    pub recovered_rate_undefined: bool,
    pub induced_rate_undefined: bool,
}

/// Which ground-truth objects (flattened image by image, class-major within
/// an image) a detection set matches.
fn matched_gt(dets: &[Vec<DetectedObject>], gt: &[Vec<BoxLabel>], classes: usize) -> Vec<Vec<bool>> {
    let mut out: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    for c in 1..=classes {
        let (scored, boxes) = class_inputs(dets, gt, c);
        let m = match_detections(&scored, &boxes, EVAL_IOU);
        for (img, labels) in gt.iter().enumerate() {
            let mut k = 0;
            for (j, l) in labels.iter().enumerate() {
                if l.class_id == c {
                    out[img][j] = m.matched[img][k];
                    k += 1;
                }
            }
        }
    }
    out
}

/// Compares a reference (source-only) detection set with an adapted one.
pub fn error_analysis(
    source_only: &[Vec<DetectedObject>],
    adapted: &[Vec<DetectedObject>],
    gt: &[Vec<BoxLabel>],
    classes: usize,
) -> Result<ErrorAnalysis> {
    if source_only.len() != gt.len() || adapted.len() != gt.len() {
        return Err(Error::GroundTruthMismatch(format!(
            "source-only has {} images, adapted {}, ground truth {}",
            source_only.len(),
            adapted.len(),
            gt.len()
        )));
    }
    let a = matched_gt(source_only, gt, classes);
    let b = matched_gt(adapted, gt, classes);
    let (mut both, mut so, mut ad, mut recovered, mut induced, mut total) = (0, 0, 0, 0, 0, 0);
    for (ra, rb) in a.iter().zip(&b) {
        for (&x, &y) in ra.iter().zip(rb) {
            total += 1;
            so += x as usize;
            ad += y as usize;
            both += (x && y) as usize;
            recovered += (!x && y) as usize;
            induced += (x && !y) as usize;
        }
    }
    let missed = total - so;
    let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    Ok(ErrorAnalysis {
        recovered_tp_rate: rate(recovered, missed),
        induced_fn_rate: rate(induced, so),
        recovered_count: recovered,
        induced_count: induced,
        both_matched: both,
        source_only_matched: so,
        adapted_matched: ad,
        source_only_missed: missed,
        total_gt: total,
        recovered_rate_undefined: missed == 0,
        induced_rate_undefined: so == 0,
    })
}

/// Instance features of test-time proposals that overlap a ground-truth box
/// at [`EVAL_IOU`], labelled with that box's class.
pub fn matched_instance_features(model: &Model, images: &[&Image], gt: &[Vec<BoxLabel>]) -> Result<Vec<(Vec<f64>, usize)>> {
    let det = &model.detector;
    let mut out = Vec::new();
    for (im, labels) in images.iter().zip(gt) {
        let fmap = det.backbone_forward(&model.store, im)?;
        let pm = det.rpn_forward(&model.store, &fmap)?;
        let props: Vec<BBox> = det.select(&pm, det.cfg.test_proposals).iter().map(|p| p.bbox).collect();
        let mut keep = Vec::new();
        for p in &props {
            let best = labels
                .iter()
                .map(|l| (p.iou_unchecked(&l.bbox), l.class_id))
                .max_by(|x, y| x.0.total_cmp(&y.0));
            if let Some((v, c)) = best {
                if v >= EVAL_IOU {
                    keep.push((*p, c));
                }
            }
        }
        if keep.is_empty() {
            continue;
        }
        let boxes: Vec<BBox> = keep.iter().map(|k| k.0).collect();
        let feats = det.instance_features(&model.store, &fmap, &boxes)?;
        for (i, (_, c)) in keep.iter().enumerate() {
            out.push((feats.row(i).to_vec(), *c));
        }
    }
    Ok(out)
}
