//! Anchors, the proposal map produced by the RPN, and proposal selection.

use serde::{Deserialize, Serialize};

use crate::geometry::{argsort_desc, nms_sorted, BBox};

/// Square anchors of the given sides centred on every grid cell, ordered
/// `(u, v, r)` with `r` fastest.
pub fn anchor_grid(rows: usize, cols: usize, stride: f64, sizes: &[f64]) -> Vec<BBox> {
    let mut out = Vec::with_capacity(rows * cols * sizes.len());
    for u in 0..rows {
        for v in 0..cols {
            let (cx, cy) = ((v as f64 + 0.5) * stride, (u as f64 + 0.5) * stride);
            for &s in sizes {
                out.push(BBox::from_center(cx, cy, s, s));
            }
        }
    }
    out
}

/// RPN output in `U x V x R` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalMap {
    pub rows: usize,
    pub cols: usize,
    pub anchors_per_cell: usize,
    /// `objectness[(u * V + v) * R + r]`, strictly inside `(0, 1)`.
    pub objectness: Vec<f64>,
    /// `box_deltas[((u * V + v) * R + r) * 4 + j]`.
    pub box_deltas: Vec<f64>,
}

impl ProposalMap {
    pub fn len(&self) -> usize {
        self.objectness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectness.is_empty()
    }

    pub fn deltas(&self, a: usize) -> [f64; 4] {
        let d = &self.box_deltas[a * 4..a * 4 + 4];
        [d[0], d[1], d[2], d[3]]
    }

    /// `(u, v, r)` of flat anchor index `a`.
    pub fn origin(&self, a: usize) -> (usize, usize, usize) {
        let r = a % self.anchors_per_cell;
        let cell = a / self.anchors_per_cell;
        (cell / self.cols, cell % self.cols, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    pub objectness: f64,
    pub grid_origin: (usize, usize, usize),
}

/// Minimum side of a clipped proposal, in pixels.
pub const MIN_PROPOSAL_SIDE: f64 = 1.0;

/// Decodes every anchor, clips to the image, drops degenerate boxes, then
/// greedy NMS in descending objectness (ties by anchor index) until `top_k`
/// proposals are kept.
pub fn select_proposals(
    pm: &ProposalMap,
    anchors: &[BBox],
    top_k: usize,
    nms_iou: f64,
    image_hw: (usize, usize),
) -> Vec<Proposal> {
    debug_assert!(top_k >= 1 && nms_iou > 0.0 && nms_iou <= 1.0);
    let (h, w) = (image_hw.0 as f64, image_hw.1 as f64);
    let boxes: Vec<BBox> = anchors
        .iter()
        .enumerate()
        .map(|(a, anchor)| anchor.decode(pm.deltas(a)).clip(w, h))
        .collect();
    let scores: Vec<f64> = boxes
        .iter()
        .zip(&pm.objectness)
        .map(|(b, &s)| {
            if b.width() >= MIN_PROPOSAL_SIDE && b.height() >= MIN_PROPOSAL_SIDE {
                s
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let order: Vec<usize> = argsort_desc(&scores)
        .into_iter()
        .filter(|&i| scores[i].is_finite())
        .collect();
    nms_sorted(&boxes, &order, nms_iou, top_k)
        .into_iter()
        .map(|a| Proposal {
            bbox: boxes[a],
            objectness: pm.objectness[a],
            grid_origin: pm.origin(a),
        })
        .collect()
}
