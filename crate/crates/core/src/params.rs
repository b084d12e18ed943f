//! Named parameter collections: the unit of initialization, optimization,
//! checkpointing and averaging.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{GradientMap, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named tensors. Insertion order is the checkpoint record order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<F>>>,
    index: BTreeMap<String, usize>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<F>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::contract(alloc::format!("duplicate parameter {name}")));
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(Arc::new(t));
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.index.get(name).map(|&i| &*self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        match self.index.get(name) {
            Some(&i) => Some(Arc::make_mut(&mut self.tensors[i])),
            None => None,
        }
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

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.tensors.iter().map(|t| &**t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.tensors.iter_mut().map(Arc::make_mut)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(self.tensors())
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Replaces every tensor of `self` with the same-named tensor of `other`.
    pub fn load_from(&mut self, other: &ParamStore<F>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::IncompatibleCheckpoint(alloc::format!(
                "expected {} records, found {}",
                self.len(),
                other.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .by_name(name)
                .ok_or_else(|| Error::IncompatibleCheckpoint(alloc::format!("missing record {name}")))?;
            if src.shape() != self.tensors[i].shape() {
                return Err(Error::IncompatibleCheckpoint(alloc::format!(
                    "record {name}: shape {:?} vs {:?}",
                    src.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = Arc::new(src.clone());
        }
        Ok(())
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<F>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.param(Arc::clone(t))).collect(),
        }
    }

    /// Registers every parameter as a constant of `g` (inference).
    pub fn bind_frozen(&self, g: &mut Graph<F>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.constant(Arc::clone(t))).collect(),
        }
    }
}

/// Graph variables of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Per-parameter gradients, zero where the loss did not reach.
    pub fn gradients<F: Scalar>(&self, store: &ParamStore<F>, mut grads: GradientMap<F>) -> ParamGrads<F> {
        ParamGrads {
            grads: self
                .vars
                .iter()
                .zip(store.tensors())
                .map(|(&v, t)| grads.remove(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect(),
        }
    }
}

/// Gradient tensors aligned with the parameters of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<F> {
    pub grads: Vec<Tensor<F>>,
}

impl<F: Scalar> ParamGrads<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        ParamGrads {
            grads: store.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads<F>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: F) {
        for t in &mut self.grads {
            t.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Global L2 norm over all tensors jointly.
    pub fn norm(&self) -> f64 {
        num_traits::Float::sqrt(self.grads.iter().map(Tensor::sq_norm).sum::<f64>())
    }
}
