use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{NumericsError, Tensor};

/// How a parameter is filled at construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal(0, std) truncated to two standard deviations.
    TruncNormal {
        std: f64,
    },
    Zeros,
    Ones,
}

/// Name, shape and initializer of one trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named trainable tensors in a fixed, deterministic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: IndexMap<String, Tensor>,
    seed: u64,
}

fn fill(spec: &ParamSpec, seed: u64, slot: usize) -> Tensor {
    let mut t = Tensor::zeros(&spec.shape);
    match spec.init {
        Init::Zeros => {}
        Init::Ones => t.data_mut().fill(1.0),
        Init::TruncNormal { std } => {
            // Independent stream per slot keeps values stable if other params change.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(slot as u64);
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in t.data_mut() {
                *v = loop {
                    let x: f64 = normal.sample(&mut rng);
                    if x.abs() <= 2.0 * std {
                        break x;
                    }
                };
            }
        }
    }
    t
}

impl ParameterStore {
    pub fn from_specs(specs: &[ParamSpec], seed: u64) -> Result<Self, NumericsError> {
        let mut params = IndexMap::with_capacity(specs.len());
        for (slot, spec) in specs.iter().enumerate() {
            if params.insert(spec.name.clone(), fill(spec, seed, slot)).is_some() {
                return Err(NumericsError::DuplicateParameter(spec.name.clone()));
            }
        }
        Ok(Self { params, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn by_slot(&self, slot: usize) -> (&str, &Tensor) {
        let (k, v) = self.params.get_index(slot).expect("slot in range");
        (k, v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.values()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.values_mut()
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.params.values().map(Tensor::shape).collect()
    }

    /// Replaces a tensor in place; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), NumericsError> {
        let slot = self.params.get_mut(name).ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "set",
                detail: format!("{name}: {:?} -> {:?}", slot.shape(), value.shape()),
            });
        }
        *slot = value;
        Ok(())
    }
}
