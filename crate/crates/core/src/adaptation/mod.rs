//! Gradient reversal, the two domain classifiers, and every adversarial loss
//! variant: uniform (traditional) and entropy-weighted alignment at image and
//! instance level, plus the gated curriculum loss at instance level.
//!
//! Losses average over locations or proposals within each domain and sum the
//! source and target halves. Entropy weights are plain numbers here and
//! constants on the tape: no gradient reaches the entropy computation.

mod classifiers;

use serde::{Deserialize, Serialize};

pub use classifiers::{DomainPredictionMap, DomainPredictionVec, ImageDomainClassifier, InstanceDomainClassifier};

use crate::autograd::{weighted_bce_mean, Graph, Var};
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::training::AblationMode;
use crate::uncertainty::{categorical_entropy, gate, EntropyMap, GateConfig};

/// Domain label of source samples.
pub const SOURCE_LABEL: f64 = 0.0;
/// Domain label of target samples.
pub const TARGET_LABEL: f64 = 1.0;

/// Gradient reversal layer.
pub fn grl(g: &mut Graph, x: Var, lambda: f64) -> Var {
    g.grl(x, lambda)
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Entropy-weighted image-level adversarial loss.
pub fn image_ua_adv_loss(
    entropy_s: &EntropyMap,
    pred_s: &DomainPredictionMap,
    entropy_t: &EntropyMap,
    pred_t: &DomainPredictionMap,
) -> Result<f64> {
    check_len("source entropy/prediction", entropy_s.data.len(), pred_s.data.len())?;
    check_len("target entropy/prediction", entropy_t.data.len(), pred_t.data.len())?;
    Ok(weighted_bce_mean(&pred_s.data, SOURCE_LABEL, &entropy_s.data)
        + weighted_bce_mean(&pred_t.data, TARGET_LABEL, &entropy_t.data))
}

/// Uniform-weight image-level adversarial loss.
pub fn image_tda_loss(pred_s: &DomainPredictionMap, pred_t: &DomainPredictionMap) -> f64 {
    weighted_bce_mean(&pred_s.data, SOURCE_LABEL, &vec![1.0; pred_s.data.len()])
        + weighted_bce_mean(&pred_t.data, TARGET_LABEL, &vec![1.0; pred_t.data.len()])
}

/// Detection entropies of a batch of detections.
pub fn detection_entropies(dets: &[Detection]) -> Result<Vec<f64>> {
    dets.iter().map(|d| categorical_entropy(&d.class_dist)).collect()
}

/// Gated detection entropies: the per-proposal weights of the curriculum loss.
pub fn curriculum_weights(det_entropy: &[f64], instance_entropy: &[f64], cfg: GateConfig) -> Result<Vec<f64>> {
    check_len("detection/instance entropy", det_entropy.len(), instance_entropy.len())?;
    Ok(det_entropy
        .iter()
        .zip(instance_entropy)
        .map(|(&ed, &e)| gate(ed, e, cfg))
        .collect())
}

/// Instance-level curriculum loss with gated detection-entropy weights.
#[allow(clippy::too_many_arguments)]
pub fn instance_ug_loss(
    det_s: &[Detection],
    e_ins_s: &[f64],
    pred_s: &DomainPredictionVec,
    det_t: &[Detection],
    e_ins_t: &[f64],
    pred_t: &DomainPredictionVec,
    cfg: GateConfig,
) -> Result<f64> {
    check_len("source detections/predictions", det_s.len(), pred_s.0.len())?;
    check_len("target detections/predictions", det_t.len(), pred_t.0.len())?;
    let ws = curriculum_weights(&detection_entropies(det_s)?, e_ins_s, cfg)?;
    let wt = curriculum_weights(&detection_entropies(det_t)?, e_ins_t, cfg)?;
    Ok(weighted_bce_mean(&pred_s.0, SOURCE_LABEL, &ws) + weighted_bce_mean(&pred_t.0, TARGET_LABEL, &wt))
}

/// Instance-level loss weighted by detection entropy, no gate.
pub fn instance_ua_loss(
    det_s: &[Detection],
    pred_s: &DomainPredictionVec,
    det_t: &[Detection],
    pred_t: &DomainPredictionVec,
) -> Result<f64> {
    check_len("source detections/predictions", det_s.len(), pred_s.0.len())?;
    check_len("target detections/predictions", det_t.len(), pred_t.0.len())?;
    let ws = detection_entropies(det_s)?;
    let wt = detection_entropies(det_t)?;
    Ok(weighted_bce_mean(&pred_s.0, SOURCE_LABEL, &ws) + weighted_bce_mean(&pred_t.0, TARGET_LABEL, &wt))
}

/// Uniform-weight instance-level adversarial loss.
pub fn instance_tda_loss(pred_s: &DomainPredictionVec, pred_t: &DomainPredictionVec) -> f64 {
    weighted_bce_mean(&pred_s.0, SOURCE_LABEL, &vec![1.0; pred_s.0.len()])
        + weighted_bce_mean(&pred_t.0, TARGET_LABEL, &vec![1.0; pred_t.0.len()])
}

/// Which image-level adversarial term a mode trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageTerm {
    None,
    Uniform,
    Entropy,
}

/// Which instance-level adversarial term a mode trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceTerm {
    None,
    Uniform,
    Entropy,
    Curriculum,
}

/// Every candidate loss value for one iteration; `total_loss` picks by mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub det: f64,
    pub img_tda: f64,
    pub img_ua: f64,
    pub ins_tda: f64,
    pub ins_ua: f64,
    pub ins_ug: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_det")]
    pub det: f64,
    #[serde(rename = "L_img")]
    pub img: f64,
    #[serde(rename = "L_ins")]
    pub ins: f64,
    pub total: f64,
}

/// Sum of the terms active under `mode`, with a per-term breakdown.
pub fn total_loss(mode: AblationMode, c: &LossComponents) -> LossBreakdown {
    let img = match mode.image_term() {
        ImageTerm::None => 0.0,
        ImageTerm::Uniform => c.img_tda,
        ImageTerm::Entropy => c.img_ua,
    };
    let ins = match mode.instance_term() {
        InstanceTerm::None => 0.0,
        InstanceTerm::Uniform => c.ins_tda,
        InstanceTerm::Entropy => c.ins_ua,
        InstanceTerm::Curriculum => c.ins_ug,
    };
    LossBreakdown {
        det: c.det,
        img,
        ins,
        total: c.det + img + ins,
    }
}

/// Adds `mean_s(w_s * CE(o_s, 0)) + mean_t(w_t * CE(o_t, 1))` to the tape for
/// logits of either classifier.
pub fn adversarial_graph(g: &mut Graph, logits_s: Var, weights_s: Vec<f64>, logits_t: Var, weights_t: Vec<f64>) -> Var {
    let ns = g.value(logits_s).len();
    let nt = g.value(logits_t).len();
    assert_eq!(ns, weights_s.len());
    assert_eq!(nt, weights_t.len());
    let a = g.weighted_bce(logits_s, (0..ns).collect(), SOURCE_LABEL, weights_s);
    let b = g.weighted_bce(logits_t, (0..nt).collect(), TARGET_LABEL, weights_t);
    g.sum(vec![a, b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::softmax;
    use crate::geometry::BBox;
    use crate::seeding::{rng_for, Stream};
    use rand::Rng;
    use std::f64::consts::LN_2;

    fn pmap(data: Vec<f64>) -> DomainPredictionMap {
        DomainPredictionMap {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    fn emap(data: Vec<f64>) -> EntropyMap {
        EntropyMap {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    fn det(dist: Vec<f64>) -> Detection {
        Detection {
            class_dist: dist,
            refined_box: BBox::new(0.0, 0.0, 4.0, 4.0),
            source_proposal: 0,
        }
    }

    fn random_dets<R: Rng>(rng: &mut R, n: usize) -> Vec<Detection> {
        (0..n)
            .map(|_| {
                let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-4.0..4.0)).collect();
                det(softmax(&logits))
            })
            .collect()
    }

    /// Term-by-term scalar loop with its own log-clamp arithmetic.
    fn oracle_bce(p: f64, y: f64) -> f64 {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        if y == 1.0 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    fn oracle_entropy(d: &[f64]) -> f64 {
        let mut h = 0.0;
        for &p in d {
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        h
    }

    #[test]
    fn image_loss_zero_weights() {
        let z = emap(vec![0.0; 4]);
        let l = image_ua_adv_loss(&z, &pmap(vec![0.1, 0.9, 0.3, 0.99]), &z, &pmap(vec![0.2, 0.4, 0.0, 1.0])).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn image_loss_single_location() {
        let one = emap(vec![1.0]);
        let l = image_ua_adv_loss(&one, &pmap(vec![0.5]), &one, &pmap(vec![0.5])).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn image_loss_matches_loop_oracle() {
        let mut rng = rng_for(1, Stream::Init, 11);
        for _ in 0..20 {
            let mut v = || (0..16).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>();
            let (es, ps, et, pt) = (v(), v(), v(), v());
            let mut s = 0.0;
            let mut t = 0.0;
            for i in 0..16 {
                s += es[i] * oracle_bce(ps[i], 0.0);
                t += et[i] * oracle_bce(pt[i], 1.0);
            }
            let expect = s / 16.0 + t / 16.0;
            let got = image_ua_adv_loss(&emap(es), &pmap(ps), &emap(et), &pmap(pt)).unwrap();
            assert!((got - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn image_loss_shape_mismatch() {
        let r = image_ua_adv_loss(&emap(vec![0.1; 3]), &pmap(vec![0.5; 4]), &emap(vec![0.1]), &pmap(vec![0.5]));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn tda_reference_values() {
        let half = DomainPredictionVec(vec![0.5; 5]);
        assert!((instance_tda_loss(&half, &half) - 2.0 * LN_2).abs() < 1e-15);
        let perfect = instance_tda_loss(&DomainPredictionVec(vec![0.0; 3]), &DomainPredictionVec(vec![1.0; 3]));
        assert!(perfect < 1e-6);
    }

    #[test]
    fn instance_losses_match_loop_oracles() {
        let mut rng = rng_for(2, Stream::Init, 12);
        for _ in 0..20 {
            let (ns, nt) = (rng.random_range(1..10), rng.random_range(1..10));
            let ds = random_dets(&mut rng, ns);
            let dt = random_dets(&mut rng, nt);
            let ps: Vec<f64> = (0..ns).map(|_| rng.random_range(0.0..1.0)).collect();
            let pt: Vec<f64> = (0..nt).map(|_| rng.random_range(0.0..1.0)).collect();
            let es: Vec<f64> = (0..ns).map(|_| rng.random_range(0.0..LN_2)).collect();
            let et: Vec<f64> = (0..nt).map(|_| rng.random_range(0.0..LN_2)).collect();
            let xi = 0.4;

            let mut tda = (0.0, 0.0);
            let mut ua = (0.0, 0.0);
            let mut ug = (0.0, 0.0);
            for k in 0..ns {
                let h = oracle_entropy(&ds[k].class_dist);
                tda.0 += oracle_bce(ps[k], 0.0);
                ua.0 += h * oracle_bce(ps[k], 0.0);
                if es[k] < xi {
                    ug.0 += h * oracle_bce(ps[k], 0.0);
                }
            }
            for k in 0..nt {
                let h = oracle_entropy(&dt[k].class_dist);
                tda.1 += oracle_bce(pt[k], 1.0);
                ua.1 += h * oracle_bce(pt[k], 1.0);
                if et[k] < xi {
                    ug.1 += h * oracle_bce(pt[k], 1.0);
                }
            }
            let mean = |(a, b): (f64, f64)| a / ns as f64 + b / nt as f64;
            let (pvs, pvt) = (DomainPredictionVec(ps), DomainPredictionVec(pt));
            assert!((instance_tda_loss(&pvs, &pvt) - mean(tda)).abs() < 1e-10);
            assert!((instance_ua_loss(&ds, &pvs, &dt, &pvt).unwrap() - mean(ua)).abs() < 1e-10);
            let got = instance_ug_loss(&ds, &es, &pvs, &dt, &et, &pvt, GateConfig { xi }).unwrap();
            assert!((got - mean(ug)).abs() < 1e-10);
        }
    }

    #[test]
    fn instance_loss_special_cases() {
        let one_hot = vec![det(vec![0.0, 1.0, 0.0, 0.0]); 3];
        let p = DomainPredictionVec(vec![0.3, 0.6, 0.9]);
        assert_eq!(instance_ua_loss(&one_hot, &p, &one_hot, &p).unwrap(), 0.0);

        let uniform = vec![det(vec![0.25; 4]); 3];
        let half = DomainPredictionVec(vec![0.5; 3]);
        let l = instance_ua_loss(&uniform, &half, &uniform, &half).unwrap();
        assert!((l - 2.0 * 4f64.ln() * LN_2).abs() < 1e-12);

        let e = vec![0.6; 3];
        let gated = instance_ug_loss(&uniform, &e, &half, &uniform, &e, &half, GateConfig { xi: 0.5 }).unwrap();
        assert_eq!(gated, 0.0);
        let closed = instance_ug_loss(&uniform, &[0.0; 3], &half, &uniform, &[0.0; 3], &half, GateConfig { xi: 0.0 }).unwrap();
        assert_eq!(closed, 0.0);

        assert!(matches!(
            instance_ua_loss(&uniform, &DomainPredictionVec(vec![0.5; 2]), &uniform, &half),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn total_loss_mode_selection() {
        let c = LossComponents {
            det: 1.5,
            img_tda: 0.7,
            img_ua: 0.3,
            ins_tda: 0.6,
            ins_ua: 0.2,
            ins_ug: 0.1,
        };
        let b = total_loss(AblationMode::Baseline, &c);
        assert_eq!((b.img, b.ins, b.total), (0.0, 0.0, 1.5));
        let u = total_loss(AblationMode::UaDAN, &c);
        assert_eq!(u.total, 1.5 + 0.3 + 0.1);
        let n = total_loss(AblationMode::UaDANNoUgCL, &c);
        assert_eq!(n.total, 1.5 + 0.3 + 0.2);
        let zero = LossComponents {
            det: 2.0,
            ..Default::default()
        };
        for m in AblationMode::ALL {
            assert_eq!(total_loss(m, &zero).total, 2.0);
        }
    }
}
