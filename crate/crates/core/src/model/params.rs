//! Named parameter storage with seeded initialization.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Index of a parameter in its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Weight,
    /// Zero.
    Bias,
    /// One; layer-norm gains.
    Gain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub fan_in: usize,
}

/// Named parameters in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S: Scalar = f32> {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
    /// Seed of the last [`ParamStore::init`], if any.
    pub seed: Option<u64>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameters of one forward pass, recorded on a tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps tape variables recorded elsewhere, in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            specs: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            seed: None,
        }
    }

    /// Registers a parameter with its initial value per `kind` (weights
    /// start at zero until [`ParamStore::init`]).
    pub fn add(&mut self, name: &str, shape: &[usize], kind: ParamKind, fan_in: usize) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "parameter '{name}' registered twice"
        );
        let id = self.specs.len();
        let fill = if kind == ParamKind::Gain {
            S::one()
        } else {
            S::zero()
        };
        self.specs.push(ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            kind,
            fan_in,
        });
        self.tensors.push(Tensor::full(shape.to_vec(), fill));
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    /// Draws every weight from a ChaCha8 stream seeded with `seed`, in
    /// registration order; biases become zero and gains one.
    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, t) in self.specs.iter().zip(&mut self.tensors) {
            match spec.kind {
                ParamKind::Weight => {
                    let bound = 1.0 / (spec.fan_in.max(1) as f64).sqrt();
                    for v in t.data_mut() {
                        *v = S::of(rng.random_range(-bound..=bound));
                    }
                }
                ParamKind::Bias => t.data_mut().fill(S::zero()),
                ParamKind::Gain => t.data_mut().fill(S::one()),
            }
        }
        self.seed = Some(seed);
    }

    /// Sets every parameter, gains included, to zero.
    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(S::zero());
        }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Replaces a parameter value, checking its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        if value.shape() != self.specs[id.0].shape.as_slice() {
            return Err(Error::Shape(format!(
                "parameter '{}' is {:?}, got {:?}",
                self.specs[id.0].name,
                self.specs[id.0].shape,
                value.shape()
            )));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    /// Records every parameter on `tape`, as differentiable leaves when
    /// `trainable` and as constants otherwise.
    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            index: self.index.clone(),
            seed: self.seed,
        }
    }

    /// Raw little-endian `f32` bytes of every parameter in order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.scalar_count() * 4);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }
}
