use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result, Scalar};

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        ParamTensor {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }

    pub fn from_values(name: impl Into<String>, shape: &[usize], values: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::shape("ParamTensor::from_values", n, values.len()));
        }
        Ok(ParamTensor {
            name: name.into(),
            shape: shape.to_vec(),
            grad: vec![T::zero(); n],
            values,
        })
    }

    /// He-normal initialization, `N(0, 2 / fan_in)`.
    pub fn he_normal<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut p = Self::zeros(name, shape);
        for v in &mut p.values {
            *v = T::lit(normal.sample(rng));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn shape_string(&self) -> String {
        if self.shape.is_empty() {
            return "scalar".to_string();
        }
        self.shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x")
    }
}
