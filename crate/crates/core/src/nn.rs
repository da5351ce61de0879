//! Parameter storage and the shared per-point perceptron.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Matrix<T>,
}

/// Ordered, named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix<T>) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    /// Puts every tensor on the tape; `trainable` decides whether gradients are tracked.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// All values concatenated in declaration order.
    pub fn flatten(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::contract(format!(
                "expected {} parameter values, got {}",
                self.num_scalars(),
                flat.len()
            )));
        }
        let mut at = 0;
        for p in &mut self.params {
            let n = p.value.data().len();
            p.value.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Name and shape of every tensor, used for architecture checks.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.rows(), p.value.cols()))
            .collect()
    }

    /// FNV-1a over the raw bytes of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for v in self.flatten() {
            v.write_le(&mut bytes);
        }
        bytes.iter().fold(0xcbf29ce484222325u64, |h, b| {
            (h ^ *b as u64).wrapping_mul(0x100000001b3)
        })
    }
}

/// Initialisation of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    FanInUniform,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    weight: usize,
    bias: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut sample = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| match init {
                    Init::Zeros => T::zero(),
                    Init::FanInUniform => T::of(rng.gen_range(-bound..bound)),
                })
                .collect()
        };
        let w = Matrix::from_vec(fan_in, fan_out, sample(fan_in * fan_out)).unwrap();
        let b = Matrix::from_vec(1, fan_out, sample(fan_out)).unwrap();
        Self {
            weight: params.push(format!("{name}.weight"), w),
            bias: params.push(format!("{name}.bias"), b),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Var {
        let h = g.matmul(x, vars[self.weight]);
        g.add_bias(h, vars[self.bias])
    }
}

/// Row-wise multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
    activate_last: bool,
}

impl Mlp {
    /// `widths[0]` is the input width. When `zero_last` is set the final layer starts at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        widths: &[usize],
        activation: Activation,
        activate_last: bool,
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if zero_last && i == n - 1 {
                    Init::Zeros
                } else {
                    Init::FanInUniform
                };
                Linear::new(params, &format!("{name}.{i}"), widths[i], widths[i + 1], init, rng)
            })
            .collect();
        Self {
            layers,
            activation,
            activate_last,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], mut x: Var) -> Var {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, vars, x);
            if (i + 1 < n || self.activate_last) && self.activation == Activation::Relu {
                x = g.relu(x);
            }
        }
        x
    }
}
