use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::{Grads, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A named, ordered collection of parameter arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an array and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn at(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Records every array as a differentiable leaf.
    pub fn attach(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| tape.leaf(t.clone())).collect()
    }

    /// Records every array as a constant.
    pub fn attach_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| tape.constant(t.clone())).collect()
    }

    /// Collects the gradients of attached parameters, zero where unused.
    pub fn gradients(&self, grads: &Grads<T>, vars: &[Var]) -> ParameterSet<T> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .zip(vars)
                .map(|((n, _), &v)| (n.clone(), grads.wrt(v)))
                .collect(),
        }
    }

    /// Replaces the arrays of `self` with those of `other`, requiring equal
    /// names and shapes.
    pub fn assign(&mut self, other: &ParameterSet<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} arrays vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((n, t), (m, u)) in self.entries.iter_mut().zip(&other.entries) {
            if n != m || t.shape() != u.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{n} {:?} vs {m} {:?}",
                    t.shape(),
                    u.shape()
                )));
            }
            *t = u.clone();
        }
        Ok(())
    }

    /// Appends every array of `other` under `prefix/`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParameterSet<T>) {
        for (n, t) in &other.entries {
            self.entries.push((format!("{prefix}/{n}"), t.clone()));
        }
    }

    /// Arrays stored under `prefix/`, with the prefix removed.
    pub fn extract_prefixed(&self, prefix: &str) -> ParameterSet<T> {
        let head = format!("{prefix}/");
        ParameterSet {
            entries: self
                .entries
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(&head).map(|m| (m.to_string(), t.clone())))
                .collect(),
        }
    }

    pub(crate) fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Self {
        Self { entries }
    }
}

/// Short content hash of a serialisable spec.
pub fn fingerprint<S: Serialize>(spec: &S) -> String {
    let json = serde_json::to_vec(spec).expect("spec serialises");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

/// He-normal weights for leaky-ReLU layers: `N(0, 2 / fan_in)`.
pub(crate) fn he_normal<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}
