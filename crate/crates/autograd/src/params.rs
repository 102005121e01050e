//! Named parameter storage.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::element::Float;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered collection of learnable tensors, addressed by [`ParamId`].
///
/// Insertion order is stable, so two stores built by the same model
/// constructor have identical layouts regardless of element type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Registers a tensor. Panics if the name is already taken, since that
    /// always indicates a model-construction bug.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name:?}");
        self.entries.push(ParamEntry { name, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.cast() })
                .collect(),
        }
    }

    /// Replaces every value from `other`, which must share names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(TensorError::shape(
                "ParamStore::load_from",
                format!("expected {} tensors, got {}", self.entries.len(), other.entries.len()),
            ));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(TensorError::shape(
                    "ParamStore::load_from",
                    format!(
                        "{} {:?} does not match {} {:?}",
                        dst.name,
                        dst.value.shape(),
                        src.name,
                        src.value.shape()
                    ),
                ));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Constant(f64),
    /// Zero-mean normal with variance `gain / fan_in`.
    FanIn { fan_in: usize, gain: f64 },
    Normal { std: f64 },
}

impl Init {
    pub fn tensor<T: Float, R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        match self {
            Init::Constant(v) => Tensor::full(shape, T::from_f64_lossy(v)),
            Init::FanIn { fan_in, gain } => {
                let std = (gain / fan_in.max(1) as f64).sqrt();
                Init::Normal { std }.tensor(shape, rng)
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("finite std");
                Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
            }
        }
    }
}
