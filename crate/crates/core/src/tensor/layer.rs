use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Trainable matrix with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub value: Matrix,
    pub grad: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
}

impl ParamTensor {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.as_mut_slice().fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// ELU with α = 1.
    #[default]
    Elu,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative evaluated at the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    ScaledNormal { gain: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::ScaledNormal { gain: 0.1 }
    }
}

/// Draws a `fan_in × fan_out` weight matrix.
pub fn init_weights(fan_in: usize, fan_out: usize, rng: &mut SeededRng, scheme: InitScheme) -> Matrix {
    match scheme {
        InitScheme::ScaledNormal { gain } => {
            let std = gain / (fan_in.max(1) as f64).sqrt();
            Matrix::from_fn(fan_in, fan_out, |_, _| rng.normal(0.0, std))
        }
    }
}

/// Fully connected layer `act(x·W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    pub activation: Activation,
}

/// Values saved by [`Dense::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Matrix,
    pub pre_activation: Matrix,
    pub output: Matrix,
}

impl Dense {
    /// Random weights, zero bias.
    pub fn new(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut SeededRng,
        scheme: InitScheme,
    ) -> Self {
        Self {
            weight: ParamTensor::new(init_weights(fan_in, fan_out, rng, scheme)),
            bias: ParamTensor::new(Matrix::zeros(1, fan_out)),
            activation,
        }
    }

    pub fn from_parts(weight: Matrix, bias: Matrix, activation: Activation) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::Shape {
                op: "dense",
                left: weight.shape(),
                right: bias.shape(),
            });
        }
        Ok(Self {
            weight: ParamTensor::new(weight),
            bias: ParamTensor::new(bias),
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<LayerCache> {
        let pre = x.matmul(&self.weight.value)?.add_row_broadcast(&self.bias.value)?;
        let act = self.activation;
        let output = pre.map(|z| act.apply(z));
        Ok(LayerCache {
            input: x.clone(),
            pre_activation: pre,
            output,
        })
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let act = self.activation;
        Ok(x
            .matmul(&self.weight.value)?
            .add_row_broadcast(&self.bias.value)?
            .map(|z| act.apply(z)))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, cache: &LayerCache, upstream: &Matrix) -> Result<Matrix> {
        if upstream.shape() != cache.output.shape() {
            return Err(Error::Shape {
                op: "dense_backward",
                left: cache.output.shape(),
                right: upstream.shape(),
            });
        }
        let act = self.activation;
        let delta = upstream.zip_map(&cache.pre_activation, |g, z| g * act.derivative(z))?;
        let w_grad = cache.input.matmul_tn(&delta)?;
        self.weight.grad.add_scaled_assign(&w_grad, 1.0)?;
        self.bias.grad.add_scaled_assign(&delta.column_sums(), 1.0)?;
        delta.matmul_nt(&self.weight.value)
    }

    pub fn params_mut(&mut self) -> [&mut ParamTensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
