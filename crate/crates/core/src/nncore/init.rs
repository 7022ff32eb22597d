//! Trainable parameters and their initialization.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// How a parameter's values were drawn at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitSpec {
    /// uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))
    XavierUniform { fan_in: usize, fan_out: usize },
    Normal { std: f64 },
    Zeros,
    Ones,
}

/// A named trainable tensor. Names are unique within a model and double as
/// checkpoint keys.
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub init: InitSpec,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor, init: InitSpec) -> Parameter {
        assert!(tensor.requires_grad(), "parameters must be trainable vars");
        Parameter {
            name: name.into(),
            tensor,
            init,
        }
    }

    pub fn xavier(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha12Rng,
    ) -> Parameter {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-a..a)).collect();
        Parameter::new(
            name,
            Tensor::var(shape, data).expect("xavier: bad shape"),
            InitSpec::XavierUniform { fan_in, fan_out },
        )
    }

    pub fn normal(
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut ChaCha12Rng,
    ) -> Parameter {
        let dist = Normal::new(0.0, std).expect("normal: bad std");
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        Parameter::new(
            name,
            Tensor::var(shape, data).expect("normal: bad shape"),
            InitSpec::Normal { std },
        )
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Parameter {
        let n: usize = shape.iter().product();
        Parameter::new(
            name,
            Tensor::var(shape, vec![0.0; n]).expect("zeros: bad shape"),
            InitSpec::Zeros,
        )
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Parameter {
        let n: usize = shape.iter().product();
        Parameter::new(
            name,
            Tensor::var(shape, vec![1.0; n]).expect("ones: bad shape"),
            InitSpec::Ones,
        )
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    /// Replaces the values, keeping the shape. The old tensor handle stays
    /// valid for anything that still references it in a recorded graph.
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.tensor.numel() {
            return Err(Error::Input(format!(
                "set_data on {}: {} values for shape {:?}",
                self.name,
                data.len(),
                self.tensor.shape()
            )));
        }
        self.tensor = Tensor::var(self.tensor.shape(), data)?;
        Ok(())
    }
}

/// Anything that owns parameters: layers, heads, whole models. Mutation goes
/// through `visit_mut`, which hands out one `&mut Parameter` at a time.
pub trait HasParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn parameters(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p));
        out
    }

    /// Replaces the values of the parameter at `index` (in `visit` order).
    fn set_param_data(&mut self, index: usize, data: Vec<f64>) -> Result<()> {
        let mut slot = Some(data);
        let mut i = 0;
        let mut result = Err(Error::Input(format!("no parameter at index {index}")));
        self.visit_mut(&mut |p| {
            if i == index {
                if let Some(d) = slot.take() {
                    result = p.set_data(d);
                }
            }
            i += 1;
        });
        result
    }

    fn num_values(&self) -> usize {
        self.parameters().iter().map(|p| p.tensor.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let p = Parameter::xavier("w", &[8, 4], 8, 4, &mut rng);
        let a = (6.0f64 / 12.0).sqrt();
        assert!(p.data().iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn set_data_checks_length() {
        let mut p = Parameter::zeros("b", &[3]);
        assert!(p.set_data(vec![1.0, 2.0]).is_err());
        assert!(p.set_data(vec![1.0, 2.0, 3.0]).is_ok());
        assert_eq!(p.data(), &[1.0, 2.0, 3.0]);
    }
}
