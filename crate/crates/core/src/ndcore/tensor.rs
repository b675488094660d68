use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, flat, row-major parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::shape(format!(
                "{name}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("{name}: non-finite value at {i}")));
        }
        Ok(Self {
            name,
            shape,
            values,
            trainable: true,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; len],
            trainable: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered collection of parameter tensors. Order is part of the checkpoint format.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<ParamTensor>) -> Self {
        Self { tensors }
    }

    pub fn push(&mut self, t: ParamTensor) -> usize {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn set_all_trainable(&mut self, flag: bool) {
        for t in &mut self.tensors {
            t.trainable = flag;
        }
    }

    pub fn zeros_like(&self) -> GradSet {
        GradSet {
            values: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }
}

/// Gradient buffers aligned one-to-one with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub values: Vec<Vec<f64>>,
}

impl GradSet {
    pub fn zero(&mut self) {
        for g in &mut self.values {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.values {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Elementwise `self += other`, in tensor then element order.
    pub fn add_assign(&mut self, other: &GradSet) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn check_matches(&self, params: &ParamSet) -> Result<()> {
        if self.values.len() != params.tensors.len() {
            return Err(Error::shape(format!(
                "{} gradient tensors for {} parameters",
                self.values.len(),
                params.tensors.len()
            )));
        }
        for (g, p) in self.values.iter().zip(&params.tensors) {
            if g.len() != p.len() {
                return Err(Error::shape(format!(
                    "{}: gradient has {} values, parameter has {}",
                    p.name,
                    g.len(),
                    p.len()
                )));
            }
        }
        Ok(())
    }
}
