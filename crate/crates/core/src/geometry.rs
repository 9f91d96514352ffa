//! Axis-aligned boxes in continuous pixel coordinates, box-delta coding and
//! greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on decoded log-scale deltas, as in the usual Faster R-CNN coder.
const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Area, zero for inverted boxes.
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1.is_finite()
            && self.y1.is_finite()
            && self.x2.is_finite()
            && self.y2.is_finite()
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn clip(&self, width: f64, height: f64) -> Self {
        Self::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Intersection over union without validity checks; 0 when the union is empty.
    pub fn iou_unchecked(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Encodes `target` relative to `self` as `(dx, dy, dw, dh)`.
    pub fn encode(&self, target: &BBox) -> [f64; 4] {
        let (ax, ay) = self.center();
        let (aw, ah) = (self.width(), self.height());
        let (gx, gy) = target.center();
        [
            (gx - ax) / aw,
            (gy - ay) / ah,
            (target.width() / aw).ln(),
            (target.height() / ah).ln(),
        ]
    }

    /// Applies `(dx, dy, dw, dh)` to `self`. Zero deltas return `self` exactly.
    pub fn decode(&self, deltas: [f64; 4]) -> BBox {
        if deltas == [0.0; 4] {
            return *self;
        }
        let (ax, ay) = self.center();
        let (aw, ah) = (self.width(), self.height());
        let cx = ax + deltas[0] * aw;
        let cy = ay + deltas[1] * ah;
        let w = aw * deltas[2].min(MAX_LOG_SCALE).exp();
        let h = ah * deltas[3].min(MAX_LOG_SCALE).exp();
        BBox::from_center(cx, cy, w, h)
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if !bx.is_valid() {
            return Err(Error::DegenerateBox(format!("{bx:?}")));
        }
    }
    Ok(a.iou_unchecked(b))
}

/// Greedy NMS over candidates already sorted by descending score. Returns the
/// indices of the kept candidates in order, stopping after `limit`.
pub fn nms_sorted(boxes: &[BBox], order: &[usize], iou_threshold: f64, limit: usize) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::with_capacity(limit.min(order.len()));
    for &i in order {
        if keep.len() >= limit {
            break;
        }
        if keep
            .iter()
            .all(|&k| boxes[k].iou_unchecked(&boxes[i]) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

/// Indices sorted by descending score, ties broken by lower index.
pub fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}
