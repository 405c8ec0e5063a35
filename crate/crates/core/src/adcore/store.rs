use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::rng::RngStream;
use super::tensor::Tensor;
use super::AdError;
use crate::scalar::Scalar;

/// Adam moments for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub adam: Option<AdamState<T>>,
    pub adagrad: Option<Tensor<T>>,
}

/// Gradients keyed by parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

/// Named parameters plus optimizer state and per-group freezing.
///
/// A parameter's group is the prefix of its name before the first `.`
/// (`gen.emb.word` belongs to group `gen`).
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    frozen: BTreeSet<String>,
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            index: HashMap::new(),
            frozen: BTreeSet::new(),
        }
    }

    /// Registers a parameter; replaces the value if the name already exists.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.params[i].value = value;
            self.params[i].adam = None;
            self.params[i].adagrad = None;
            return i;
        }
        let i = self.params.len();
        self.index.insert(name.clone(), i);
        self.params.push(Parameter {
            name,
            value,
            adam: None,
            adagrad: None,
        });
        i
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.id(name)?;
        Some(&mut self.params[i].value)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>, AdError> {
        self.get(name)
            .ok_or_else(|| AdError::UnknownParameter(name.to_string()))
    }

    pub fn param(&self, id: usize) -> &Parameter<T> {
        &self.params[id]
    }

    pub(crate) fn param_mut(&mut self, id: usize) -> &mut Parameter<T> {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn freeze(&mut self, group: &str) {
        self.frozen.insert(group.to_string());
    }

    pub fn unfreeze(&mut self, group: &str) {
        self.frozen.remove(group);
    }

    pub fn is_group_frozen(&self, group: &str) -> bool {
        self.frozen.contains(group)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(group_of(name))
    }

    pub fn frozen_groups(&self) -> impl Iterator<Item = &str> {
        self.frozen.iter().map(String::as_str)
    }

    /// Parameters belonging to `group`, in registration order.
    pub fn group_params<'a>(&'a self, group: &'a str) -> impl Iterator<Item = &'a Parameter<T>> {
        self.params.iter().filter(move |p| group_of(&p.name) == group)
    }

    /// Bit-exact comparison of all values in a group against another store.
    pub fn group_bit_eq(&self, other: &ParameterStore<T>, group: &str) -> bool {
        let a: Vec<_> = self.group_params(group).collect();
        let b: Vec<_> = other.group_params(group).collect();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.name == y.name && x.value.bit_eq(&y.value))
    }

    /// Bit-exact comparison of values and optimizer state for every parameter.
    pub fn bit_eq(&self, other: &ParameterStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self.frozen == other.frozen
            && self.params.iter().zip(&other.params).all(|(x, y)| {
                x.name == y.name
                    && x.value.bit_eq(&y.value)
                    && match (&x.adam, &y.adam) {
                        (None, None) => true,
                        (Some(a), Some(b)) => a.step == b.step && a.m.bit_eq(&b.m) && a.v.bit_eq(&b.v),
                        _ => false,
                    }
                    && match (&x.adagrad, &y.adagrad) {
                        (None, None) => true,
                        (Some(a), Some(b)) => a.bit_eq(b),
                        _ => false,
                    }
            })
    }

    /// Drops all optimizer state (used when switching optimizers between phases).
    pub fn reset_optimizer_state(&mut self) {
        for p in &mut self.params {
            p.adam = None;
            p.adagrad = None;
        }
    }

    pub(crate) fn set_frozen_groups(&mut self, groups: impl IntoIterator<Item = String>) {
        self.frozen = groups.into_iter().collect();
    }
}

/// Glorot-uniform weight matrix: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::c(rng.uniform_range(-a, a))).collect();
    Tensor::matrix(rows, cols, data)
}

/// `N(0, std)` matrix, used for embeddings without pre-trained vectors.
pub fn normal_init<T: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> Tensor<T> {
    let data = (0..rows * cols).map(|_| T::c(rng.normal(0.0, std))).collect();
    Tensor::matrix(rows, cols, data)
}

/// Standard deviation for randomly initialized embedding rows.
pub const EMBEDDING_INIT_STD: f64 = 0.01;
