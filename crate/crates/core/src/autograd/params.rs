use std::collections::HashMap;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// Rows (along axis 0) that never receive updates, e.g. the padding
    /// row of an embedding table.
    pub frozen_rows: Vec<usize>,
}

impl<T: Scalar> Param<T> {
    /// Apply `frozen_rows`: zero the rows in both value and grad.
    pub fn clear_frozen_rows(&mut self) {
        if self.frozen_rows.is_empty() {
            return;
        }
        let width = self.value.numel() / self.value.shape()[0];
        for &row in &self.frozen_rows {
            let span = row * width..(row + 1) * width;
            self.value.data_mut()[span.clone()].fill(T::zero());
            if let Some(g) = self.grad.as_mut() {
                g.data_mut()[span].fill(T::zero());
            }
        }
    }
}

/// Ordered, named collection of parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid("params", format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: None,
            frozen_rows: Vec::new(),
        });
        Ok(id)
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        let p = &mut self.params[id.0];
        p.frozen_rows.push(row);
        p.clear_frozen_rows();
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Add `grad` into the stored gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) {
        let p = &mut self.params[id.0];
        match p.grad.as_mut() {
            Some(g) => {
                for (a, &b) in g.data_mut().iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => {
                let t = Tensor::new(p.value.shape(), grad.to_vec()).expect("gradient matches parameter shape");
                p.grad = Some(t);
            }
        }
    }

    /// Sum over all parameters of Σw².
    pub fn sum_sq(&self) -> f64 {
        self.params.iter().map(|p| p.value.sum_sq().f64()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(Tensor::cast),
                    frozen_rows: p.frozen_rows.clone(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
