use crate::autograd::ParamGrads;
use crate::params::ParamStore;

/// SGD with heavy-ball momentum. Weight decay is added to the gradient of
/// parameters flagged for it. A parameter with no gradient this step is
/// treated as having a zero gradient, so its decay and momentum still apply.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: store.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        for (i, (p, v)) in store.params.iter_mut().zip(&mut self.velocity).enumerate() {
            let g = grads.get(i);
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            for k in 0..p.value.len() {
                let gk = g.map_or(0.0, |g| g[k]) + wd * p.value[k];
                v[k] = self.momentum * v[k] + gk;
                p.value[k] -= lr * v[k];
            }
        }
    }
}
