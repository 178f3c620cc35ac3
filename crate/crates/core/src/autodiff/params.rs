use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Named parameter tensors with gradient buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Inserts or replaces a parameter; replacing keeps its id.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        if let Some(&i) = self.index.get(name) {
            let p = &mut self.params[i];
            p.value = value;
            p.grad = grad;
            return ParamId(i);
        }
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
            trainable: true,
        });
        self.index.insert(name.to_string(), self.params.len() - 1);
        ParamId(self.params.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Marks every parameter whose name starts with `prefix`; returns how many matched.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for p in self
            .params
            .iter_mut()
            .filter(|p| p.name.starts_with(prefix))
        {
            p.trainable = trainable;
            n += 1;
        }
        n
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Adds one sweep's parameter gradients into the stored buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            let p = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {id:?}")))?;
            p.grad.add_assign(g)?;
        }
        Ok(())
    }

    /// Copies values of every name present in both stores into `self`.
    pub fn copy_matching(&mut self, from: &ParamStore<T>, prefix: &str) -> usize {
        let mut n = 0;
        for p in from.iter().filter(|p| p.name.starts_with(prefix)) {
            if let Some(&i) = self.index.get(&p.name) {
                if self.params[i].value.shape() == p.value.shape() {
                    self.params[i].value = p.value.clone();
                    n += 1;
                }
            }
        }
        n
    }

    /// True when both stores have the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    /// Bitwise equality of all values whose names start with `prefix`.
    pub fn values_equal(&self, other: &ParamStore<T>, prefix: &str) -> bool {
        let mine: Vec<_> = self.iter().filter(|p| p.name.starts_with(prefix)).collect();
        let theirs: Vec<_> = other
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .collect();
        mine.len() == theirs.len()
            && mine.iter().zip(&theirs).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits_eq(*y))
            })
    }
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Scalar> BitsEq for T {
    fn to_bits_eq(self, other: Self) -> bool {
        let (a, b) = (self.as_f64(), other.as_f64());
        a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
    }
}

/// He-normal initialisation: `N(0, 2 / fan_in)`.
pub fn he_normal<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}
