use serde::{Deserialize, Serialize};

use super::layers::Parameters;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// SGD with classical momentum: `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor2>,
}

impl Sgd {
    pub fn new<P: Parameters>(learning_rate: f64, momentum: f64, params: &P) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: params
                .tensors()
                .iter()
                .map(|t| Tensor2::zeros(t.rows, t.cols))
                .collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor2] {
        &self.velocity
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        if ps.len() != gs.len() || ps.len() != self.velocity.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors, {} gradients, {} velocity buffers",
                ps.len(),
                gs.len(),
                self.velocity.len()
            )));
        }
        for ((p, g), v) in ps.iter().zip(&gs).zip(&self.velocity) {
            p.check_shape(g)?;
            p.check_shape(v)?;
        }
        for ((p, g), v) in ps.into_iter().zip(gs).zip(self.velocity.iter_mut()) {
            for ((pi, &gi), vi) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.learning_rate * *vi;
            }
        }
        Ok(())
    }
}
