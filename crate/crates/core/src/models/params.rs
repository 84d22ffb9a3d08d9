use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::Result;
use crate::scalar::Scalar;

/// Named parameter tensors, addressed by insertion index.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<S: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for Params<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Params<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor<S>>) -> Self {
        Self { names, tensors }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<S> {
        &self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter on `g`, as differentiable leaves when
    /// `trainable` and as constants otherwise. Index `i` of the result is the
    /// node of parameter `i`.
    pub fn register<'a>(&'a self, g: &mut Graph<'a, S>, trainable: bool) -> Result<Vec<NodeId>> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf_ref(t)
                } else {
                    g.constant_ref(t)
                }
            })
            .collect()
    }
}

/// Glorot-uniform matrix.
pub(crate) fn glorot<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows, cols, limit)
}

pub(crate) fn uniform<S: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    limit: f64,
) -> Tensor<S> {
    let data = (0..rows * cols)
        .map(|_| S::lit(rng.gen_range(-limit..=limit)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("sizes agree")
}

pub(crate) fn filled<S: Scalar>(rows: usize, cols: usize, value: f64) -> Tensor<S> {
    Tensor::matrix(rows, cols, vec![S::lit(value); rows * cols]).expect("sizes agree")
}

/// Train-mode dropout source. `None` rng means evaluation mode, where
/// dropout is the identity.
pub(crate) struct Dropout<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn eval() -> Self {
        Dropout {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn apply<S: Scalar>(&mut self, g: &mut Graph<'_, S>, x: NodeId) -> Result<NodeId> {
        let rate = self.rate;
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = S::lit(1.0 / (1.0 - rate));
        let mask = (0..g.value(x).numel())
            .map(|_| if rng.gen_bool(rate) { S::zero() } else { keep })
            .collect();
        g.dropout(x, mask)
    }
}
