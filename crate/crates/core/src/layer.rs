//! Dense affine layer: `y = activation(W·x + b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One dense layer. Weights are `(out_dim, in_dim)` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// Xavier-uniform initialized layer: weights from `[-s, s]` with
    /// `s = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn xavier<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument("layer dims must be > 0".into()));
        }
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-s..s))
            .collect();
        Ok(DenseLayer {
            weights: Matrix::from_vec(out_dim, in_dim, data)?,
            bias: vec![0.0; out_dim],
            activation,
        })
    }

    /// All-zero layer, used for classifier heads so an untrained model emits
    /// uniform probabilities.
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument("layer dims must be > 0".into()));
        }
        Ok(DenseLayer {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[cfg(test)]
    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    /// Disjoint mutable views of the weight data and bias, in that order.
    pub(crate) fn split_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.weights.as_mut_slice(), &mut self.bias)
    }

    /// `activation(W·x + b)`.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(Error::shape("dense layer input", self.in_dim(), input.len()));
        }
        let mut out = vec![0.0; self.out_dim()];
        self.weights.matvec(input, &mut out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o = self.activation.apply(*o + b);
        }
        Ok(out)
    }

    /// Validates the stored shapes; used after deserializing checkpoints.
    pub fn check(&self) -> Result<()> {
        if self.bias.len() != self.weights.rows() {
            return Err(Error::shape(
                "dense layer bias",
                self.weights.rows(),
                self.bias.len(),
            ));
        }
        if !self.bias.iter().all(|v| v.is_finite())
            || !self.weights.as_slice().iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "layer parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }
}
