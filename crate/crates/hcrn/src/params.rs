//! Named parameter store.
//!
//! Every trainable tensor is addressable by a hierarchical dotted name
//! (`clip.relate1.k3.w1`). Names are kept sorted so that iteration order —
//! and with it optimizer state, checkpoints and gradient checks — is
//! deterministic.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::sampler::SamplerError;
use crate::tensor::{Tape, Tensor, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("missing parameter `{name}`")]
    MissingParam { name: String },
    #[error("parameter `{name}` has shape {got:?}, expected {want:?}")]
    ParamShape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("{0}")]
    BadInput(String),
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Vec<f64>>;

/// The complete set of trainable tensors of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    map: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.map.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    /// Xavier-uniform weight matrix `[fan_in, fan_out]`.
    pub fn init_linear<R: Rng>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.insert(
            name,
            Tensor {
                shape: vec![fan_in, fan_out],
                data,
            },
        );
    }

    pub fn init_zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn init_uniform<R: Rng>(&mut self, name: &str, shape: Vec<usize>, limit: f64, rng: &mut R) {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(-limit..limit)).collect();
        self.insert(name, Tensor { shape, data });
    }
}

/// Binds parameters onto a tape once each, so that reuse of a shared weight
/// across the graph accumulates into a single leaf gradient.
pub struct TapeBinder<'p> {
    params: &'p ModelParams,
    bound: BTreeMap<String, TensorId>,
}

impl<'p> TapeBinder<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        TapeBinder {
            params,
            bound: BTreeMap::new(),
        }
    }

    pub fn bind(&mut self, tape: &mut Tape, name: &str) -> Result<TensorId, ModelError> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| ModelError::MissingParam {
                name: name.to_string(),
            })?
            .clone();
        let id = tape.leaf(t);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Pull gradients for every bound parameter after `tape.backward`.
    pub fn harvest(&self, tape: &Tape) -> GradMap {
        let mut out = GradMap::new();
        for (name, &id) in &self.bound {
            out.insert(name.clone(), tape.grad(id));
        }
        out
    }
}
