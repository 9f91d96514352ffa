//! Named parameter tensors and their initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    /// Module path, e.g. `backbone.conv1.weight`.
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    /// Whether weight decay applies (weights yes, biases no).
    pub decay: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Zero-mean Gaussian with the given standard deviation.
    Gaussian(f64),
    /// He-normal on the given fan-in.
    FanIn(usize),
}

impl ParamStore {
    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, decay: bool, rng: &mut R) -> ParamId {
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::Gaussian(std) => {
                let d = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::FanIn(fan_in) => {
                let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        };
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Places parameter `id` on the graph as a leaf.
    pub fn leaf(&self, g: &mut Graph, id: ParamId) -> Var {
        let p = &self.params[id.0];
        g.param(id.0, &p.value, &p.shape)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
