//! Per-class average precision at a fixed IoU threshold with greedy
//! one-to-one matching and all-points interpolation.

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

/// One scored box of a single class on one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub image: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// Outcome of matching one class's detections against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices in evaluation order.
    pub order: Vec<usize>,
    /// Whether each detection (indexed as in the input) is a true positive.
    pub is_tp: Vec<bool>,
    /// For each image, which of its ground-truth boxes were matched.
    pub matched: Vec<Vec<bool>>,
}

/// Evaluation order: score descending, then box area descending, then input
/// position.
pub fn detection_order(dets: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then_with(|| dets[b].bbox.area().total_cmp(&dets[a].bbox.area()))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy matching: in evaluation order, each detection takes the unmatched
/// role of its highest-IoU ground truth on the same image if that IoU reaches
/// the threshold and the box is still free; otherwise it is a false positive.
pub fn match_detections(dets: &[ScoredBox], gt: &[Vec<BBox>], iou_threshold: f64) -> MatchResult {
    let order = detection_order(dets);
    let mut matched: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut is_tp = vec![false; dets.len()];
    for &i in &order {
        let d = &dets[i];
        let Some(boxes) = gt.get(d.image) else { continue };
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in boxes.iter().enumerate() {
            let v = d.bbox.iou_unchecked(g);
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, j));
            }
        }
        if let Some((v, j)) = best {
            if v >= iou_threshold && !matched[d.image][j] {
                matched[d.image][j] = true;
                is_tp[i] = true;
            }
        }
    }
    MatchResult { order, is_tp, matched }
}

/// `(recall, precision)` after each detection in evaluation order.
pub fn pr_curve(m: &MatchResult, n_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    let mut out = Vec::with_capacity(m.order.len());
    for (k, &i) in m.order.iter().enumerate() {
        if m.is_tp[i] {
            tp += 1;
        }
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        out.push((recall, tp as f64 / (k + 1) as f64));
    }
    out
}

/// Area under the monotone precision envelope.
pub fn ap_from_curve(curve: &[(f64, f64)]) -> f64 {
    let mut envelope: Vec<(f64, f64)> = curve.to_vec();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k].1 = envelope[k].1.max(envelope[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(r, p) in &envelope {
        if r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

/// AP of one class. `None` when there is neither ground truth nor any
/// detection; `Some(0.0)` for detections without ground truth.
pub fn average_precision(dets: &[ScoredBox], gt: &[Vec<BBox>], iou_threshold: f64) -> Option<f64> {
    let n_gt: usize = gt.iter().map(Vec::len).sum();
    match (n_gt, dets.len()) {
        (0, 0) => None,
        (0, _) | (_, 0) => Some(0.0),
        _ => {
            let m = match_detections(dets, gt, iou_threshold);
            Some(ap_from_curve(&pr_curve(&m, n_gt)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{rng_for, Stream};
    use rand::Rng;

    fn sb(image: usize, score: f64, b: BBox) -> ScoredBox {
        ScoredBox { image, score, bbox: b }
    }

    fn bx(x: f64, y: f64, s: f64) -> BBox {
        BBox::new(x, y, x + s, y + s)
    }

    #[test]
    fn perfect_single() {
        let g = vec![vec![bx(0.0, 0.0, 10.0)]];
        assert_eq!(average_precision(&[sb(0, 0.9, bx(0.0, 0.0, 10.0))], &g, 0.5), Some(1.0));
        assert_eq!(average_precision(&[], &g, 0.5), Some(0.0));
        assert_eq!(average_precision(&[], &[vec![]], 0.5), None);
        assert_eq!(average_precision(&[sb(0, 0.3, bx(0.0, 0.0, 4.0))], &[vec![]], 0.5), Some(0.0));
    }

    #[test]
    fn tp_fp_tp_example() {
        // Recall/precision points (0.5, 1), (0.5, 0.5), (1, 2/3):
        // envelope gives 0.5 * 1 + 0.5 * 2/3.
        let g = vec![vec![bx(0.0, 0.0, 10.0), bx(30.0, 30.0, 10.0)]];
        let d = [
            sb(0, 0.9, bx(0.0, 0.0, 10.0)),
            sb(0, 0.8, bx(50.0, 0.0, 10.0)),
            sb(0, 0.7, bx(30.0, 30.0, 10.0)),
        ];
        let ap = average_precision(&d, &g, 0.5).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let g = vec![vec![bx(0.0, 0.0, 10.0)]];
        let d = [sb(0, 0.9, bx(0.0, 0.0, 10.0)), sb(0, 0.8, bx(0.0, 0.0, 10.0))];
        let m = match_detections(&d, &g, 0.5);
        assert_eq!(m.is_tp, vec![true, false]);
    }

    #[test]
    fn equal_score_order_is_input_independent() {
        let mut rng = rng_for(11, Stream::Variance, 0);
        for _ in 0..50 {
            let g = vec![(0..3).map(|_| bx(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), 12.0)).collect::<Vec<_>>()];
            let dets: Vec<ScoredBox> = (0..6)
                .map(|_| sb(0, 0.5, bx(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), rng.random_range(8.0..16.0))))
                .collect();
            let mut rev = dets.clone();
            rev.reverse();
            assert_eq!(average_precision(&dets, &g, 0.5), average_precision(&rev, &g, 0.5));
        }
    }
}
