//! Anchor and ROI target assignment and the supervised two-stage loss.
//!
//! The loss exists twice: once on the tape (what training differentiates) and
//! once over plain values (what the public [`detection_loss`] returns). Both
//! consume the same [`AnchorTargets`] and [`RoiTargets`].

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{bce, clamp_prob, Graph, Var};
use crate::datagen::BoxLabel;
use crate::detector::{Detection, ProposalMap};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetLossConfig {
    pub rpn_batch: usize,
    /// Upper bound on the positive share of the RPN minibatch.
    pub rpn_positive_fraction: f64,
    pub rpn_positive_iou: f64,
    pub rpn_negative_iou: f64,
    pub roi_batch: usize,
    pub roi_foreground_fraction: f64,
    pub roi_foreground_iou: f64,
    pub smooth_l1_beta: f64,
}

impl Default for DetLossConfig {
    fn default() -> Self {
        Self {
            rpn_batch: 64,
            rpn_positive_fraction: 0.5,
            rpn_positive_iou: 0.5,
            rpn_negative_iou: 0.3,
            roi_batch: 32,
            roi_foreground_fraction: 0.5,
            roi_foreground_iou: 0.5,
            smooth_l1_beta: 1.0 / 9.0,
        }
    }
}

impl DetLossConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| x > 0.0 && x <= 1.0;
        if self.rpn_batch == 0 || self.roi_batch == 0 {
            return Err(Error::Config("sampling batch sizes must be positive".into()));
        }
        if !frac(self.rpn_positive_fraction) || !frac(self.roi_foreground_fraction) {
            return Err(Error::Config("sampling fractions must lie in (0, 1]".into()));
        }
        if !(self.rpn_negative_iou <= self.rpn_positive_iou && frac(self.rpn_positive_iou) && frac(self.roi_foreground_iou)) {
            return Err(Error::Config("matching thresholds must satisfy 0 < neg <= pos <= 1".into()));
        }
        if !(self.smooth_l1_beta > 0.0 && self.smooth_l1_beta.is_finite()) {
            return Err(Error::Config("smooth_l1_beta must be positive".into()));
        }
        Ok(())
    }
}

/// Sampled RPN training anchors. Indices are flat `(u * V + v) * R + r`
/// anchor indices, ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorTargets {
    pub positives: Vec<usize>,
    /// Regression target of each positive, same order.
    pub regression: Vec<[f64; 4]>,
    pub negatives: Vec<usize>,
}

impl AnchorTargets {
    pub fn sampled(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }
}

/// Sampled RCNN training ROIs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoiTargets {
    /// ROI indices, ascending.
    pub rows: Vec<usize>,
    /// Class target of each row (0 = background).
    pub classes: Vec<usize>,
    /// Foreground rows and their regression targets.
    pub foreground: Vec<(usize, [f64; 4])>,
}

fn best_match(b: &BBox, gt: &[BBox]) -> (f64, usize) {
    let mut best = (0.0, 0);
    for (j, g) in gt.iter().enumerate() {
        let v = b.iou_unchecked(g);
        if v > best.0 {
            best = (v, j);
        }
    }
    best
}

/// Keeps at most `n` of `idx` at random, returning them sorted.
fn subsample<R: Rng>(mut idx: Vec<usize>, n: usize, rng: &mut R) -> Vec<usize> {
    if idx.len() > n {
        idx.shuffle(rng);
        idx.truncate(n);
    }
    idx.sort_unstable();
    idx
}

/// Labels anchors against ground truth: IoU at or above the positive
/// threshold is foreground, below the negative threshold is background, and
/// each ground-truth box also claims its highest-IoU anchors.
pub fn match_anchors<R: Rng>(anchors: &[BBox], gt: &[BBox], cfg: &DetLossConfig, rng: &mut R) -> AnchorTargets {
    let mut assigned: Vec<Option<usize>> = vec![None; anchors.len()];
    let mut negatives = Vec::new();
    let matches: Vec<(f64, usize)> = anchors.iter().map(|a| best_match(a, gt)).collect();
    for (i, &(v, j)) in matches.iter().enumerate() {
        if !gt.is_empty() && v >= cfg.rpn_positive_iou {
            assigned[i] = Some(j);
        } else if v < cfg.rpn_negative_iou {
            negatives.push(i);
        }
    }
    for (j, g) in gt.iter().enumerate() {
        let best = anchors.iter().map(|a| a.iou_unchecked(g)).fold(0.0, f64::max);
        if best <= 0.0 {
            continue;
        }
        for (i, a) in anchors.iter().enumerate() {
            if a.iou_unchecked(g) == best {
                assigned[i] = Some(j);
            }
        }
    }
    negatives.retain(|&i| assigned[i].is_none());
    let positives: Vec<usize> = (0..anchors.len()).filter(|&i| assigned[i].is_some()).collect();
    let max_pos = (cfg.rpn_batch as f64 * cfg.rpn_positive_fraction).floor() as usize;
    let positives = subsample(positives, max_pos, rng);
    let negatives = subsample(negatives, cfg.rpn_batch - positives.len(), rng);
    let regression = positives
        .iter()
        .map(|&i| anchors[i].encode(&gt[assigned[i].expect("positive is assigned")]))
        .collect();
    AnchorTargets {
        positives,
        regression,
        negatives,
    }
}

/// Assigns each ROI the class of its best-overlapping ground truth when the
/// IoU clears the foreground threshold, background otherwise, then samples.
pub fn match_rois<R: Rng>(rois: &[BBox], gt: &[BoxLabel], cfg: &DetLossConfig, rng: &mut R) -> RoiTargets {
    let gt_boxes: Vec<BBox> = gt.iter().map(|l| l.bbox).collect();
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let matches: Vec<(f64, usize)> = rois.iter().map(|r| best_match(r, &gt_boxes)).collect();
    for (i, &(v, _)) in matches.iter().enumerate() {
        if !gt.is_empty() && v >= cfg.roi_foreground_iou {
            fg.push(i);
        } else {
            bg.push(i);
        }
    }
    let max_fg = ((cfg.roi_batch as f64 * cfg.roi_foreground_fraction).floor() as usize).max(1);
    let fg = subsample(fg, max_fg, rng);
    let bg = subsample(bg, cfg.roi_batch - fg.len(), rng);
    let mut rows: Vec<usize> = fg.iter().chain(&bg).copied().collect();
    rows.sort_unstable();
    let classes = rows
        .iter()
        .map(|i| {
            if fg.binary_search(i).is_ok() {
                gt[matches[*i].1].class_id
            } else {
                0
            }
        })
        .collect();
    let foreground = fg
        .iter()
        .map(|&i| (i, rois[i].encode(&gt_boxes[matches[i].1])))
        .collect();
    RoiTargets {
        rows,
        classes,
        foreground,
    }
}

fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

/// The four parts of the supervised loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionLoss {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub rcnn_cls: f64,
    pub rcnn_reg: f64,
}

impl DetectionLoss {
    pub fn total(&self) -> f64 {
        self.rpn_cls + self.rpn_reg + self.rcnn_cls + self.rcnn_reg
    }
}

fn per(n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        1.0 / n as f64
    }
}

/// Supervised loss from already-computed outputs.
///
/// `pm` and `anchors` describe the RPN; `rois[i]` is the box that produced
/// `dets[i]`. Classification terms are means over the sampled anchors or ROIs,
/// and regression terms are sums over positives divided by the same counts.
/// RCNN regression reads its deltas back from the refined boxes.
pub fn detection_loss<R: Rng>(
    pm: &ProposalMap,
    anchors: &[BBox],
    rois: &[BBox],
    dets: &[Detection],
    labels: Option<&[BoxLabel]>,
    cfg: &DetLossConfig,
    rng: &mut R,
) -> Result<(DetectionLoss, AnchorTargets, RoiTargets)> {
    let labels = labels.ok_or(Error::MissingLabels)?;
    if pm.len() != anchors.len() || rois.len() != dets.len() {
        return Err(Error::Shape(format!(
            "{} anchors for {} objectness values, {} rois for {} detections",
            anchors.len(),
            pm.len(),
            rois.len(),
            dets.len()
        )));
    }
    let gt: Vec<BBox> = labels.iter().map(|l| l.bbox).collect();
    let at = match_anchors(anchors, &gt, cfg, rng);
    let rt = match_rois(rois, labels, cfg, rng);
    let beta = cfg.smooth_l1_beta;

    let n_rpn = per(at.sampled());
    let rpn_cls = (at.positives.iter().map(|&a| bce(pm.objectness[a], 1.0)).sum::<f64>()
        + at.negatives.iter().map(|&a| bce(pm.objectness[a], 0.0)).sum::<f64>())
        * n_rpn;
    let rpn_reg = at
        .positives
        .iter()
        .zip(&at.regression)
        .map(|(&a, t)| {
            let d = pm.deltas(a);
            (0..4).map(|j| smooth_l1(d[j] - t[j], beta)).sum::<f64>()
        })
        .sum::<f64>()
        * n_rpn;

    let n_roi = per(rt.rows.len());
    let rcnn_cls = rt
        .rows
        .iter()
        .zip(&rt.classes)
        .map(|(&i, &c)| -clamp_prob(dets[i].class_dist[c]).ln())
        .sum::<f64>()
        * n_roi;
    let rcnn_reg = rt
        .foreground
        .iter()
        .map(|(i, t)| {
            let d = rois[*i].encode(&dets[*i].refined_box);
            (0..4).map(|j| smooth_l1(d[j] - t[j], beta)).sum::<f64>()
        })
        .sum::<f64>()
        * n_roi;
    Ok((
        DetectionLoss {
            rpn_cls,
            rpn_reg,
            rcnn_cls,
            rcnn_reg,
        },
        at,
        rt,
    ))
}

/// Tape handles for the RPN half of the loss.
pub fn rpn_loss_graph(
    g: &mut Graph,
    objectness_logits: Var,
    deltas: Var,
    anchors_per_cell: usize,
    targets: &AnchorTargets,
    beta: f64,
) -> Var {
    let plane = g.value(objectness_logits).len() / anchors_per_cell;
    let logit_index = |a: usize| (a % anchors_per_cell) * plane + a / anchors_per_cell;
    let delta_index = |a: usize, j: usize| ((a % anchors_per_cell) * 4 + j) * plane + a / anchors_per_cell;
    let n = targets.sampled();
    let mut terms = Vec::new();
    // weighted_bce averages over its own indices; rescale so the two halves
    // form a mean over every sampled anchor.
    for (set, label) in [(&targets.positives, 1.0), (&targets.negatives, 0.0)] {
        if !set.is_empty() {
            let w = set.len() as f64 / n as f64;
            let idx = set.iter().map(|&a| logit_index(a)).collect();
            terms.push(g.weighted_bce(objectness_logits, idx, label, vec![w; set.len()]));
        }
    }
    if !targets.positives.is_empty() {
        let mut idx = Vec::new();
        let mut tgt = Vec::new();
        for (&a, t) in targets.positives.iter().zip(&targets.regression) {
            for (j, &v) in t.iter().enumerate() {
                idx.push(delta_index(a, j));
                tgt.push(v);
            }
        }
        terms.push(g.smooth_l1(deltas, idx, tgt, beta, 1.0 / n as f64));
    }
    g.sum(terms)
}

/// Tape handles for the RCNN half of the loss. ROI rows are split across
/// several `(class_logits, deltas, offset, len)` blocks that together index
/// the ROI list the targets were built on.
pub fn rcnn_loss_graph(g: &mut Graph, blocks: &[(Var, Var, usize, usize)], classes: usize, targets: &RoiTargets, beta: f64) -> Var {
    let scale = per(targets.rows.len());
    let mut terms = Vec::new();
    for &(logits, deltas, offset, len) in blocks {
        let in_block = |i: usize| i >= offset && i < offset + len;
        let (rows, cls): (Vec<usize>, Vec<usize>) = targets
            .rows
            .iter()
            .zip(&targets.classes)
            .filter(|(i, _)| in_block(**i))
            .map(|(i, c)| (i - offset, *c))
            .unzip();
        if !rows.is_empty() {
            terms.push(g.softmax_ce(logits, classes, rows, cls, scale));
        }
        let mut idx = Vec::new();
        let mut tgt = Vec::new();
        for (i, t) in targets.foreground.iter().filter(|(i, _)| in_block(*i)) {
            for (j, &v) in t.iter().enumerate() {
                idx.push((i - offset) * 4 + j);
                tgt.push(v);
            }
        }
        if !idx.is_empty() {
            terms.push(g.smooth_l1(deltas, idx, tgt, beta, scale));
        }
    }
    g.sum(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::PROB_EPS;
    use crate::seeding::{rng_for, Stream};
    use std::f64::consts::LN_2;

    fn label(c: usize, b: BBox) -> BoxLabel {
        BoxLabel { class_id: c, bbox: b }
    }

    fn pm_from(obj: Vec<f64>, deltas: Vec<[f64; 4]>) -> ProposalMap {
        ProposalMap {
            rows: 1,
            cols: obj.len(),
            anchors_per_cell: 1,
            objectness: obj,
            box_deltas: deltas.into_iter().flatten().collect(),
        }
    }

    fn det(dist: Vec<f64>, b: BBox) -> Detection {
        Detection {
            class_dist: dist,
            refined_box: b,
            source_proposal: 0,
        }
    }

    #[test]
    fn missing_labels_error() {
        let pm = pm_from(vec![0.5], vec![[0.0; 4]]);
        let a = [BBox::new(0.0, 0.0, 8.0, 8.0)];
        let err = detection_loss(&pm, &a, &[], &[], None, &DetLossConfig::default(), &mut rng_for(0, Stream::Sampling, 0));
        assert!(matches!(err, Err(Error::MissingLabels)));
    }

    #[test]
    fn single_anchor_single_gt_matches_hand_computation() {
        // Anchor (0,0,10,10) and GT (1,0,11,10): IoU = 90/110, a positive.
        let anchor = BBox::new(0.0, 0.0, 10.0, 10.0);
        let gt = BBox::new(1.0, 0.0, 11.0, 10.0);
        let pm = pm_from(vec![0.7], vec![[0.05, 0.0, 0.2, 0.0]]);
        let roi = BBox::new(0.0, 0.0, 10.0, 10.0);
        let d = det(vec![0.1, 0.6, 0.2, 0.1], roi);
        let labels = [label(1, gt)];
        let (loss, at, rt) = detection_loss(
            &pm,
            &[anchor],
            &[roi],
            &[d],
            Some(&labels),
            &DetLossConfig::default(),
            &mut rng_for(0, Stream::Sampling, 0),
        )
        .unwrap();
        assert_eq!(at.positives, vec![0]);
        assert!(at.negatives.is_empty());
        assert_eq!(rt.classes, vec![1]);
        let beta = 1.0 / 9.0;
        // Target deltas: dx = 1/10, others 0.
        let sl1 = |x: f64| if x.abs() < beta { 0.5 * x * x / beta } else { x.abs() - 0.5 * beta };
        let rpn_reg = sl1(0.05 - 0.1) + sl1(0.0) + sl1(0.2) + sl1(0.0);
        assert!((loss.rpn_cls - (-(0.7f64).ln())).abs() < 1e-12);
        assert!((loss.rpn_reg - rpn_reg).abs() < 1e-12);
        assert!((loss.rcnn_cls - (-(0.6f64).ln())).abs() < 1e-12);
        // Refined box equals the ROI, so its deltas are zero; target dx = 0.1.
        assert!((loss.rcnn_reg - sl1(-0.1)).abs() < 1e-8);
    }

    #[test]
    fn uniform_outputs_give_log_class_counts() {
        let anchors: Vec<BBox> = (0..20)
            .map(|i| BBox::new(i as f64 * 3.0, 0.0, i as f64 * 3.0 + 10.0, 10.0))
            .collect();
        let gt = [label(2, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let pm = pm_from(vec![0.5; 20], vec![[0.0; 4]; 20]);
        let dets: Vec<Detection> = anchors.iter().map(|a| det(vec![0.25; 4], *a)).collect();
        let (loss, at, rt) = detection_loss(
            &pm,
            &anchors,
            &anchors,
            &dets,
            Some(&gt),
            &DetLossConfig::default(),
            &mut rng_for(1, Stream::Sampling, 0),
        )
        .unwrap();
        assert!(at.sampled() > 1 && rt.rows.len() > 1);
        assert!((loss.rpn_cls - LN_2).abs() < 1e-12);
        assert!((loss.rcnn_cls - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor_is_near_zero() {
        let anchors: Vec<BBox> = (0..10)
            .map(|i| BBox::new(i as f64 * 6.0, 0.0, i as f64 * 6.0 + 8.0, 8.0))
            .collect();
        let gt_box = BBox::new(1.0, 0.5, 9.0, 8.5);
        let gt = [label(3, gt_box)];
        let cfg = DetLossConfig::default();
        let at = match_anchors(&anchors, &[gt_box], &cfg, &mut rng_for(2, Stream::Sampling, 0));
        let mut obj = vec![0.0; 10];
        let mut deltas = vec![[0.0; 4]; 10];
        for (&a, t) in at.positives.iter().zip(&at.regression) {
            obj[a] = 1.0;
            deltas[a] = *t;
        }
        let pm = pm_from(obj.into_iter().map(clamp_prob).collect(), deltas);
        let dets: Vec<Detection> = anchors
            .iter()
            .map(|a| {
                let fg = a.iou_unchecked(&gt_box) >= 0.5;
                let mut dist = vec![0.0; 4];
                dist[if fg { 3 } else { 0 }] = 1.0;
                det(dist, if fg { gt_box } else { *a })
            })
            .collect();
        let (loss, _, _) = detection_loss(&pm, &anchors, &anchors, &dets, Some(&gt), &cfg, &mut rng_for(2, Stream::Sampling, 0)).unwrap();
        assert!(loss.total() < 10.0 * PROB_EPS, "{loss:?}");
    }

    #[test]
    fn anchor_sampling_respects_caps() {
        let anchors: Vec<BBox> = (0..400)
            .map(|i| {
                let x = (i % 20) as f64 * 3.0;
                let y = (i / 20) as f64 * 3.0;
                BBox::new(x, y, x + 12.0, y + 12.0)
            })
            .collect();
        let gt = [BBox::new(10.0, 10.0, 40.0, 40.0)];
        let at = match_anchors(&anchors, &gt, &DetLossConfig::default(), &mut rng_for(3, Stream::Sampling, 0));
        assert!(at.positives.len() <= 32);
        assert_eq!(at.sampled(), 64);
        assert!(at.positives.windows(2).all(|w| w[0] < w[1]));
        for &p in &at.positives {
            assert!(at.negatives.binary_search(&p).is_err());
        }
    }

    #[test]
    fn best_anchor_claims_low_overlap_gt() {
        let anchors = [BBox::new(0.0, 0.0, 8.0, 8.0), BBox::new(30.0, 30.0, 38.0, 38.0)];
        let gt = [BBox::new(2.0, 2.0, 20.0, 20.0)];
        let at = match_anchors(&anchors, &gt, &DetLossConfig::default(), &mut rng_for(0, Stream::Sampling, 0));
        assert_eq!(at.positives, vec![0]);
        assert_eq!(at.negatives, vec![1]);
    }
}
