//! Ordered name -> tensor map holding parameters and their gradient
//! accumulators. Iteration order is insertion order, which fixes the layout
//! of checkpoints, optimizer state, and gradient reductions.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numgrad::Matrix;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Matrix>,
    grads: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a parameter tensor; its gradient accumulator starts at zero
    /// with the same shape. Names must be unique.
    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Input(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.params.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_len(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index.get(name).copied().map(|i| &mut self.params[i])
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.index.get(name).map(|&i| &self.grads[i])
    }

    pub fn grad_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index.get(name).copied().map(|i| &mut self.grads[i])
    }

    /// (name, parameter, gradient) triples in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Matrix, &Matrix)> {
        self.names
            .iter()
            .zip(&self.params)
            .zip(&self.grads)
            .map(|((n, p), g)| (n.as_str(), p, g))
    }

    pub fn param_at(&self, idx: usize) -> (&str, &Matrix) {
        (&self.names[idx], &self.params[idx])
    }

    pub fn param_at_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.params[idx]
    }

    pub fn grad_at(&self, idx: usize) -> &Matrix {
        &self.grads[idx]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.as_mut_slice().fill(0.0);
        }
    }

    /// Copies gradients from `other` (matched by name and shape) into this
    /// store's gradient slots.
    pub fn set_grads_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_same_layout(other)?;
        for (g, src) in self.grads.iter_mut().zip(&other.params) {
            g.as_mut_slice().copy_from_slice(src.as_slice());
        }
        Ok(())
    }

    /// Accumulates `scale * other.params` into this store's params. Used for
    /// ordered gradient reductions.
    pub fn add_scaled_params(&mut self, other: &ParamStore, scale: f64) -> Result<()> {
        self.check_same_layout(other)?;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            for (d, &s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Dimension(
                "parameter stores have different tensor names".into(),
            ));
        }
        for ((n, a), b) in self.names.iter().zip(&self.params).zip(&other.params) {
            if a.shape() != b.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {n:?}: shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// A store with the same names and shapes, all values zero.
    pub fn zeros_like(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, p) in self.names.iter().zip(&self.params) {
            out.insert(name, Matrix::zeros(p.rows(), p.cols())).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut s = ParamStore::new();
        s.insert("w2", Matrix::zeros(1, 1)).unwrap();
        s.insert("w1", Matrix::zeros(2, 2)).unwrap();
        s.insert("b", Matrix::zeros(2, 1)).unwrap();
        let names: Vec<&str> = s.names().collect();
        assert_eq!(names, ["w2", "w1", "b"]);
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::zeros(1, 1)).unwrap();
        assert!(s.insert("w", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn grads_match_param_shapes() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::zeros(3, 4)).unwrap();
        assert_eq!(s.grad("w").unwrap().shape(), (3, 4));
    }

    #[test]
    fn add_scaled_params_accumulates_in_order() {
        let mut acc = ParamStore::new();
        acc.insert("w", Matrix::zeros(1, 2)).unwrap();
        let mut one = ParamStore::new();
        one.insert("w", Matrix::from_vec(1, 2, vec![2.0, -4.0]).unwrap())
            .unwrap();
        acc.add_scaled_params(&one, 0.5).unwrap();
        assert_eq!(acc.get("w").unwrap().as_slice(), &[1.0, -2.0]);
    }
}
