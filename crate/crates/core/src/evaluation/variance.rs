use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Within- and between-class spread of a labelled feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    pub counts: BTreeMap<usize, usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `sigma_w2 = sum_c (n_c / N) * mean_i |x_i - mu_c|^2` and
/// `sigma_b2 = sum_c (n_c / N) * |mu_c - mu|^2`.
pub fn class_variance(features: &[(Vec<f64>, usize)]) -> Result<VarianceReport> {
    let mut groups: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for (f, c) in features {
        groups.entry(*c).or_default().push(f);
    }
    if groups.len() < 2 {
        return Err(Error::SingleClass("between-class variance undefined".into()));
    }
    let dim = features[0].0.len();
    if features.iter().any(|(f, _)| f.len() != dim) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    let n = features.len() as f64;
    let mut mu = vec![0.0; dim];
    for (f, _) in features {
        for (m, x) in mu.iter_mut().zip(f) {
            *m += x / n;
        }
    }
    let (mut w, mut b) = (0.0, 0.0);
    let mut counts = BTreeMap::new();
    for (c, rows) in &groups {
        let nc = rows.len() as f64;
        let mut mc = vec![0.0; dim];
        for r in rows {
            for (m, x) in mc.iter_mut().zip(*r) {
                *m += x / nc;
            }
        }
        let within: f64 = rows.iter().map(|r| sq_dist(r, &mc)).sum::<f64>() / nc;
        w += nc / n * within;
        b += nc / n * sq_dist(&mc, &mu);
        counts.insert(*c, rows.len());
    }
    Ok(VarianceReport {
        sigma_w2: w,
        sigma_b2: b,
        counts,
    })
}

/// Randomly keeps at most `cap` features per class, preserving input order.
pub fn sample_per_class<R: Rng>(features: &[(Vec<f64>, usize)], cap: usize, rng: &mut R) -> Vec<(Vec<f64>, usize)> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, c)) in features.iter().enumerate() {
        by_class.entry(*c).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (_, mut idx) in by_class {
        if idx.len() > cap {
            idx.shuffle(rng);
            idx.truncate(cap);
        }
        keep.extend(idx);
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| features[i].clone()).collect()
}
