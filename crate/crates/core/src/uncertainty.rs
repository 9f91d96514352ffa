//! Entropy measures over RPN and RCNN outputs and the curriculum gate.
//!
//! All entropies are in nats. Binary entropy is bounded by `ln 2`, so any
//! gate threshold `xi >= ln 2` always passes and `xi = 0` never does.

use serde::{Deserialize, Serialize};

use crate::autograd::{clamp_prob, PROB_EPS};
use crate::detector::{roi_pool, FeatureMap, ProposalMap};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// `U x V` map of per-location proposal entropy, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl EntropyMap {
    pub fn as_grid(&self) -> FeatureMap {
        FeatureMap {
            channels: 1,
            rows: self.rows,
            cols: self.cols,
            data: self.data.clone(),
        }
    }
}

/// How the pooled `M x M` entropy patch collapses to one value per proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchReduction {
    #[default]
    Mean,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub xi: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { xi: 0.5 }
    }
}

/// `-p ln p - (1 - p) ln(1 - p)` with `p` clamped to `[eps, 1 - eps]`.
pub fn binary_entropy(p: f64) -> f64 {
    let p = clamp_prob(p);
    let q = 1.0 - p;
    // Symmetric evaluation: order the two terms so H(p) and H(1 - p) round identically.
    let (a, b) = if p <= q { (p, q) } else { (q, p) };
    -(a * a.ln()) - b * b.ln()
}

/// Minimum over anchors of the binary objectness entropy at each location.
pub fn proposal_entropy_map(pm: &ProposalMap) -> EntropyMap {
    let r = pm.anchors_per_cell;
    let data = pm
        .objectness
        .chunks_exact(r)
        .map(|cell| cell.iter().map(|&p| binary_entropy(p)).fold(f64::INFINITY, f64::min))
        .collect();
    EntropyMap {
        rows: pm.rows,
        cols: pm.cols,
        data,
    }
}

/// Shannon entropy `-sum_c d_c ln d_c` of a probability vector.
pub fn categorical_entropy(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() || dist.iter().any(|p| !(-1e-6..=1.0 + 1e-6).contains(p)) {
        return Err(Error::InvalidDistribution(format!("{dist:?}")));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(dist
        .iter()
        .map(|&p| {
            let p = p.clamp(0.0, 1.0);
            if p <= PROB_EPS {
                0.0
            } else {
                -p * p.ln()
            }
        })
        .sum())
}

/// ROI-pooled proposal entropy under `bbox`, reduced to a scalar.
pub fn instance_proposal_entropy(
    em: &EntropyMap,
    bbox: &BBox,
    stride: f64,
    m: usize,
    reduction: PatchReduction,
) -> Result<f64> {
    let pooled = roi_pool(&em.as_grid(), bbox, stride, m)?;
    let d = &pooled.data;
    Ok(match reduction {
        PatchReduction::Mean => d.iter().sum::<f64>() / d.len() as f64,
        PatchReduction::Min => d.iter().copied().fold(f64::INFINITY, f64::min),
        PatchReduction::Max => d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Curriculum gate: passes the detection entropy through only while the
/// instance proposal entropy is strictly below `xi`.
#[inline]
pub fn gate(detection_entropy: f64, instance_entropy: f64, cfg: GateConfig) -> f64 {
    if instance_entropy < cfg.xi {
        detection_entropy
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn binary_entropy_reference_points() {
        assert!((binary_entropy(0.5) - LN_2).abs() < 1e-15);
        assert!(binary_entropy(0.0) < 2e-6);
        assert!(binary_entropy(1.0) < 2e-6);
        // -0.9 ln 0.9 - 0.1 ln 0.1 = 0.3250829733914482
        assert!((binary_entropy(0.9) - 0.325_082_973_391_448_2).abs() < 1e-12);
    }

    #[test]
    fn categorical_entropy_reference_points() {
        assert!((categorical_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(categorical_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        // -(0.7 ln 0.7 + 0.2 ln 0.2 + 0.1 ln 0.1) = 0.8018185525433373
        assert!((categorical_entropy(&[0.7, 0.2, 0.1]).unwrap() - 0.801_818_552_543_337_3).abs() < 1e-12);
        assert!(matches!(
            categorical_entropy(&[0.5, 0.6]),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(categorical_entropy(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn entropy_map_takes_min_over_anchors() {
        let pm = ProposalMap {
            rows: 1,
            cols: 2,
            anchors_per_cell: 2,
            objectness: vec![0.5, 0.9, 0.5, 0.5],
            box_deltas: vec![0.0; 16],
        };
        let em = proposal_entropy_map(&pm);
        assert!((em.data[0] - 0.325_082_973_391_448_2).abs() < 1e-12);
        assert_eq!(em.data[1], binary_entropy(0.5));
        let pm = ProposalMap {
            objectness: vec![0.5, PROB_EPS, 0.5, 0.5],
            ..pm
        };
        assert!(proposal_entropy_map(&pm).data[0] < 2e-6);
    }

    #[test]
    fn instance_entropy_cases() {
        let em = EntropyMap {
            rows: 4,
            cols: 4,
            data: vec![0.3; 16],
        };
        let b = BBox::new(3.0, 1.0, 9.0, 14.0);
        assert!((instance_proposal_entropy(&em, &b, 4.0, 4, PatchReduction::Mean).unwrap() - 0.3).abs() < 1e-15);
        let zero = EntropyMap {
            data: vec![0.0; 16],
            ..em.clone()
        };
        assert_eq!(instance_proposal_entropy(&zero, &b, 4.0, 4, PatchReduction::Mean).unwrap(), 0.0);
        // Full box, M = 4 over a 4x4 map: pooled patch equals the map.
        let data: Vec<f64> = (0..16).map(|i| i as f64 * 0.04).collect();
        let em = EntropyMap { data: data.clone(), ..em };
        let full = BBox::new(0.0, 0.0, 16.0, 16.0);
        let mean = instance_proposal_entropy(&em, &full, 4.0, 4, PatchReduction::Mean).unwrap();
        assert!((mean - data.iter().sum::<f64>() / 16.0).abs() < 1e-15);
        assert_eq!(instance_proposal_entropy(&em, &full, 4.0, 4, PatchReduction::Min).unwrap(), 0.0);
        assert_eq!(instance_proposal_entropy(&em, &full, 4.0, 4, PatchReduction::Max).unwrap(), 0.6);
    }

    #[test]
    fn gate_branches() {
        let cfg = GateConfig { xi: 0.5 };
        assert_eq!(gate(0.4, 0.3, cfg), 0.4);
        assert_eq!(gate(0.4, 0.6, cfg), 0.0);
        assert_eq!(gate(0.4, 0.5, cfg), 0.0);
    }

    proptest! {
        #[test]
        fn binary_entropy_symmetric_and_bounded(p in 0.0f64..=1.0) {
            let h = binary_entropy(p);
            prop_assert!((h - binary_entropy(1.0 - p)).abs() < 1e-12);
            prop_assert!((0.0..=LN_2 + 1e-9).contains(&h));
        }

        #[test]
        fn gate_extremes(ed in 0.0f64..2.0, e in 0.0f64..=LN_2) {
            prop_assert_eq!(gate(ed, e, GateConfig { xi: 1.0 }), ed);
            prop_assert_eq!(gate(ed, e, GateConfig { xi: 0.0 }), 0.0);
            let once = gate(ed, e, GateConfig { xi: 0.5 });
            prop_assert_eq!(gate(once, e, GateConfig { xi: 0.5 }), once);
        }
    }
}
