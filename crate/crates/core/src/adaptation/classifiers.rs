use rand::Rng;

use crate::autograd::{clamp_prob, sigmoid, ConvGeom, Graph, Var};
use crate::detector::{DetectorConfig, FeatureMap, InstanceFeatures};
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};

/// Per-location probability that features come from the target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPredictionMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Per-proposal probability of the target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPredictionVec(pub Vec<f64>);

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

fn dense<R: Rng>(store: &mut ParamStore, name: &str, out: usize, inp: usize, std: f64, rng: &mut R) -> Dense {
    Dense {
        w: store.add(&format!("{name}.weight"), &[out, inp], Init::Gaussian(std), true, rng),
        b: store.add(&format!("{name}.bias"), &[out], Init::Zeros, false, rng),
    }
}

/// Two pointwise convolutions `D -> D_h -> 1` with a ReLU between.
#[derive(Debug, Clone)]
pub struct ImageDomainClassifier {
    rows: usize,
    cols: usize,
    dim: usize,
    hidden: usize,
    l1: Dense,
    l2: Dense,
}

impl ImageDomainClassifier {
    pub fn register<R: Rng>(cfg: &DetectorConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let (rows, cols) = cfg.grid();
        let (dim, hidden) = (cfg.feature_dim(), cfg.image_classifier_hidden);
        Self {
            rows,
            cols,
            dim,
            hidden,
            l1: dense(store, "img_cls.conv1", hidden, dim, cfg.head_init_std, rng),
            l2: dense(store, "img_cls.conv2", 1, hidden, cfg.head_init_std, rng),
        }
    }

    fn geom(&self, c_in: usize, c_out: usize) -> ConvGeom {
        ConvGeom {
            c_in,
            h: self.rows,
            w: self.cols,
            c_out,
            k: 1,
            stride: 1,
            pad: 0,
        }
    }

    /// Logits `1 x U x V` for features already passed through gradient reversal.
    pub fn logits(&self, store: &ParamStore, g: &mut Graph, features: Var) -> Result<Var> {
        let (w, b) = (store.leaf(g, self.l1.w), store.leaf(g, self.l1.b));
        let h = g.conv2d(features, w, b, self.geom(self.dim, self.hidden))?;
        let h = g.relu(h);
        let (w, b) = (store.leaf(g, self.l2.w), store.leaf(g, self.l2.b));
        g.conv2d(h, w, b, self.geom(self.hidden, 1))
    }

    pub fn predict(&self, store: &ParamStore, features: &FeatureMap) -> Result<DomainPredictionMap> {
        if features.channels != self.dim || features.rows != self.rows || features.cols != self.cols {
            return Err(Error::Shape("image classifier input does not match feature grid".into()));
        }
        let mut g = Graph::new();
        let f = g.input(features.data.clone(), vec![self.dim, self.rows, self.cols]);
        let z = self.logits(store, &mut g, f)?;
        Ok(DomainPredictionMap {
            rows: self.rows,
            cols: self.cols,
            data: g.value(z).iter().map(|&z| clamp_prob(sigmoid(z))).collect(),
        })
    }
}

/// Three affine layers `K -> h -> h -> 1`, ReLU and dropout after the first two.
#[derive(Debug, Clone)]
pub struct InstanceDomainClassifier {
    dim: usize,
    hidden: usize,
    dropout: f64,
    l1: Dense,
    l2: Dense,
    l3: Dense,
}

impl InstanceDomainClassifier {
    pub fn register<R: Rng>(cfg: &DetectorConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let (dim, hidden, std) = (cfg.instance_dim, cfg.instance_classifier_hidden, cfg.head_init_std);
        Self {
            dim,
            hidden,
            dropout: cfg.instance_dropout,
            l1: dense(store, "ins_cls.fc1", hidden, dim, std, rng),
            l2: dense(store, "ins_cls.fc2", hidden, hidden, std, rng),
            l3: dense(store, "ins_cls.fc3", 1, hidden, std, rng),
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout
    }

    fn mask<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 - self.dropout;
        (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    /// Logits `n x 1`. Dropout is active only when `train_rng` is given.
    pub fn logits<R: Rng>(&self, store: &ParamStore, g: &mut Graph, features: Var, train_rng: Option<&mut R>) -> Result<Var> {
        let n = g.value(features).len() / self.dim;
        let mut rng = train_rng;
        let (w, b) = (store.leaf(g, self.l1.w), store.leaf(g, self.l1.b));
        let mut h = g.linear(features, w, b)?;
        h = g.relu(h);
        if let Some(r) = rng.as_deref_mut() {
            let m = self.mask(n * self.hidden, r);
            h = g.dropout(h, m);
        }
        let (w, b) = (store.leaf(g, self.l2.w), store.leaf(g, self.l2.b));
        h = g.linear(h, w, b)?;
        h = g.relu(h);
        if let Some(r) = rng {
            let m = self.mask(n * self.hidden, r);
            h = g.dropout(h, m);
        }
        let (w, b) = (store.leaf(g, self.l3.w), store.leaf(g, self.l3.b));
        g.linear(h, w, b)
    }

    /// Eval-mode prediction.
    pub fn predict(&self, store: &ParamStore, features: &InstanceFeatures) -> Result<DomainPredictionVec> {
        if features.dim != self.dim {
            return Err(Error::Shape(format!(
                "instance classifier expects dim {}, got {}",
                self.dim, features.dim
            )));
        }
        if features.is_empty() {
            return Ok(DomainPredictionVec(Vec::new()));
        }
        let mut g = Graph::new();
        let f = g.input(features.data.clone(), vec![features.len(), self.dim]);
        let z = self.logits::<rand_chacha::ChaCha8Rng>(store, &mut g, f, None)?;
        Ok(DomainPredictionVec(
            g.value(z).iter().map(|&z| clamp_prob(sigmoid(z))).collect(),
        ))
    }

    /// Zeroes every layer so each prediction is exactly 0.5.
    pub fn zero(&self, store: &mut ParamStore) {
        for l in [self.l1, self.l2, self.l3] {
            store.get_mut(l.w).value.fill(0.0);
            store.get_mut(l.b).value.fill(0.0);
        }
    }
}

impl ImageDomainClassifier {
    pub fn zero(&self, store: &mut ParamStore) {
        for l in [self.l1, self.l2] {
            store.get_mut(l.w).value.fill(0.0);
            store.get_mut(l.b).value.fill(0.0);
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}
