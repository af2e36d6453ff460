use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// A container of trainable tensors with a fixed traversal order.
///
/// Gradient buffers are values of the same type, so optimizers and the
/// finite-difference checker can pair tensors positionally.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&Tensor2>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor2>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// `self += alpha · other`
    fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(alpha, b);
        }
    }

    fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.scale(alpha);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`
    pub weight: Tensor2,
    /// `1 × out`
    pub bias: Tensor2,
}

impl Linear {
    pub fn new<R: Rng>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input_dim.max(1) as f64).sqrt();
        Linear {
            weight: Tensor2::uniform(output_dim, input_dim, bound, rng),
            bias: Tensor2::uniform(1, output_dim, bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.data.clone();
        self.weight.matvec_acc(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad`, returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        grad.weight.add_outer(dy, x);
        for (b, &d) in grad.bias.data.iter_mut().zip(dy) {
            *b += d;
        }
        let mut dx = vec![0.0; self.input_dim()];
        self.weight.matvec_t_acc(dy, &mut dx);
        dx
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&Tensor2> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Word vectors, one row per word index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: Tensor2,
}

impl Embedding {
    /// Rows drawn from a standard normal.
    pub fn new<R: Rng>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        Embedding {
            table: Tensor2::standard_normal(vocab, dim, rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.rows
    }

    pub fn dim(&self) -> usize {
        self.table.cols
    }

    pub fn lookup(&self, indices: &[usize]) -> Result<Tensor2> {
        let mut out = Tensor2::zeros(indices.len(), self.dim());
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= self.vocab() {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    len: self.vocab(),
                });
            }
            out.row_mut(i).copy_from_slice(self.table.row(idx));
        }
        Ok(out)
    }

    /// Scatter-adds `d_out` rows back onto the looked-up table rows.
    pub fn backward(indices: &[usize], d_out: &Tensor2, grad: &mut Embedding) {
        for (i, &idx) in indices.iter().enumerate() {
            super::tensor::axpy(1.0, d_out.row(i), grad.table.row_mut(idx));
        }
    }
}

impl Parameters for Embedding {
    fn tensors(&self) -> Vec<&Tensor2> {
        vec![&self.table]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![&mut self.table]
    }
}
