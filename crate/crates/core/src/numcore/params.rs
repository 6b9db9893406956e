use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors of one model.
///
/// Order is the registration order and is what the optimizer state and the
/// checkpoint format follow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Registers `prefix.w` (`fan_in × fan_out`, Glorot-uniform) and
    /// `prefix.b` (zeros).
    pub fn dense<R: Rng>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Dense {
        let w = self.push(format!("{prefix}.w"), glorot_uniform(fan_in, fan_out, rng));
        let b = self.push(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
        Dense { w, b }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces every tensor with one of the same name and shape from
    /// `other`, which must hold exactly the same layout.
    pub fn load_from(&mut self, other: ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Corrupt(format!(
                "parameter names differ: expected {:?}, found {:?}",
                self.names, other.names
            )));
        }
        for ((name, mine), theirs) in self.names.iter().zip(&self.tensors).zip(&other.tensors) {
            if mine.shape() != theirs.shape() {
                return Err(Error::Corrupt(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    mine.shape(),
                    theirs.shape()
                )));
            }
        }
        self.tensors = other.tensors;
        Ok(())
    }

    /// Puts every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .map(|t| g.param(t.clone()))
            .collect::<Result<_>>()?;
        Ok(Bound(vars))
    }
}

/// Graph handles for a [`ParamStore`], index-compatible with it.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps leaves created in [`ParamStore`] order, e.g. the ones
    /// [`grad_check`](super::grad_check) hands to its objective.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Affine layer `x · w + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.get(self.w))?;
        g.add(y, p.get(self.b))
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}
