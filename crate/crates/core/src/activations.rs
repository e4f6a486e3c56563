//! Elementwise non-linearities and their first derivatives.

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Slope of leaky ReLU on the negative half-line.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu,
    /// Normalizes over the whole vector. Forward only.
    Softmax,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Softmax,
    ];

    /// Tag byte used by the model file.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
            Activation::LeakyRelu => 3,
            Activation::Softmax => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn apply(self, z: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Sigmoid => z.map(sigmoid),
            Activation::Tanh => z.map(f64::tanh),
            Activation::Relu => z.map(|x| x.max(0.0)),
            Activation::LeakyRelu => z.map(|x| if x >= 0.0 { x } else { LEAKY_SLOPE * x }),
            Activation::Softmax => softmax(z)?,
        })
    }

    pub fn derivative(self, z: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Sigmoid => z.map(|x| {
                let s = sigmoid(x);
                s * (1.0 - s)
            }),
            Activation::Tanh => z.map(|x| {
                let t = x.tanh();
                1.0 - t * t
            }),
            // ReLU family: the kink at 0 takes the right-hand slope.
            Activation::Relu => z.map(|x| if x >= 0.0 { 1.0 } else { 0.0 }),
            Activation::LeakyRelu => z.map(|x| if x >= 0.0 { 1.0 } else { LEAKY_SLOPE }),
            Activation::Softmax => {
                return Err(Error::Unsupported(
                    "softmax has no elementwise derivative; use it for inference only".into(),
                ))
            }
        })
    }

    /// True when the activation is non-differentiable somewhere (ReLU kinks).
    pub fn has_kink(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Softmax => "softmax",
        };
        f.write_str(name)
    }
}

/// Softmax over a vector, shifted by its maximum before exponentiating.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    if z.rank() != 1 {
        return Err(shape_err(format!(
            "softmax expects rank 1, got {:?}",
            z.shape()
        )));
    }
    let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.data().iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::from_vec(z.shape(), exps.into_iter().map(|e| e / total).collect())
}
