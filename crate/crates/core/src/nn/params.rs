use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors with paired gradient buffers.
///
/// Frozen entries (normalization statistics, for instance) are stored and
/// checkpointed like any other tensor but never receive gradients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(self.id(name).is_none(), "duplicate parameter name '{name}'");
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.trainable.push(trainable);
        ParamId(self.names.len() - 1)
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_frozen(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    /// Number of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.ids().filter(|&id| self.is_trainable(id)).map(|id| self.value(id).len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients) {
        for (dst, src) in self.grads.iter_mut().zip(&grads.0) {
            dst.axpy(1.0, src);
        }
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &Tensor, bool)> {
        self.values
            .iter_mut()
            .zip(&self.grads)
            .zip(&self.trainable)
            .map(|((v, g), &t)| (v, g, t))
    }

    /// Name to nested row arrays.
    pub fn to_named(&self) -> BTreeMap<String, Vec<Vec<f64>>> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), v.to_rows()))
            .collect()
    }

    /// Overwrites values by name. Every stored parameter must be present with
    /// a matching shape.
    pub fn load_named(&mut self, named: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<(), NnError> {
        for (i, name) in self.names.iter().enumerate() {
            let rows = named
                .get(name)
                .ok_or_else(|| NnError::Param(format!("missing parameter '{name}'")))?;
            let t = if rows.is_empty() {
                Tensor::zeros(0, self.values[i].cols())
            } else {
                Tensor::from_rows(rows)?
            };
            if t.shape() != self.values[i].shape() {
                return Err(NnError::shape(name, self.values[i].shape(), t.shape()));
            }
            self.values[i] = t;
        }
        if let Some(extra) = named.keys().find(|k| self.id(k).is_none()) {
            return Err(NnError::Param(format!("unexpected parameter '{extra}'")));
        }
        Ok(())
    }
}

/// Gradient tensors aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients(store.values.iter().map(|v| Tensor::zeros(v.rows(), v.cols())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.0[id.0].axpy(1.0, g);
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(Tensor::all_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_round_trip_and_shape_checks() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        s.add_frozen("mu", Tensor::scalar(0.5));
        let named = s.to_named();
        let mut t = s.clone();
        t.value_mut(w).data_mut()[0] = 9.0;
        t.load_named(&named).unwrap();
        assert_eq!(s, t);
        let mut bad = named.clone();
        bad.insert("w".into(), vec![vec![1.0]]);
        assert!(matches!(t.load_named(&bad), Err(NnError::ShapeMismatch { .. })));
        assert_eq!(s.n_trainable(), 2);
        assert_eq!(s.grad(w).shape(), s.value(w).shape());
    }
}
