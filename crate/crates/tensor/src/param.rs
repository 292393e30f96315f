use std::hash::{DefaultHasher, Hash, Hasher};

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::{Scalar, Tensor};

/// A named, optionally frozen model weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Leaf handles for every parameter of a store on one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Ordered collection of parameters belonging to one network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            tensor,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.params.iter_mut().for_each(|p| p.trainable = trainable);
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Records every parameter as a leaf; frozen ones do not require grad.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone(), p.trainable))
            .collect();
        Bound { vars }
    }

    /// Gradients of the trainable parameters after `g.backward`, in store
    /// order (`None` for frozen or unused parameters).
    pub fn grads_from(&self, g: &Graph<T>, bound: &Bound) -> Vec<Option<Vec<T>>> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| {
                if p.trainable {
                    g.grad(v).map(<[T]>::to_vec)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Adds `factor · grads` into each trainable parameter's accumulator.
    pub fn accumulate(&mut self, grads: &[Option<Vec<T>>], factor: T) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            let (true, Some(g)) = (p.trainable, g) else {
                continue;
            };
            let acc = p
                .tensor
                .grad
                .get_or_insert_with(|| vec![T::zero(); g.len()]);
            acc.iter_mut().zip(g).for_each(|(a, &d)| *a += factor * d);
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.grad = None);
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }

    /// Copies values from `other`, matching parameters by name and shape.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        for p in &mut self.params {
            let Some(src) = other.by_name(&p.name) else {
                return shape_err(format!("missing parameter {}", p.name));
            };
            if src.tensor.shape() != p.tensor.shape() {
                return shape_err(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.tensor.shape(),
                    src.tensor.shape()
                ));
            }
            p.tensor = src.tensor.clone();
        }
        Ok(())
    }

    /// Hash over names, shapes and the exact bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.params {
            p.name.hash(&mut h);
            p.tensor.shape().hash(&mut h);
            for v in p.tensor.data() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}
