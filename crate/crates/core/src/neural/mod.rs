//! Small deterministic `f64` neural toolkit: embeddings, gated recurrent
//! cells, linear layers, softmax / cross-entropy and momentum SGD, with
//! hand-written backward passes.

pub mod cell;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use cell::{CellStack, GatedCellParams, StackCache};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{Embedding, Linear, Parameters};
pub use loss::{cross_entropy, softmax};
pub use optim::Sgd;
pub use tensor::Tensor2;

use crate::error::Result;

/// Row lookup; errors on an out-of-range index.
pub fn embed_lookup(table: &Embedding, indices: &[usize]) -> Result<Tensor2> {
    table.lookup(indices)
}

/// One gated-cell step; errors on non-finite input.
pub fn cell_step(
    p: &GatedCellParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    p.step(x, h_prev, c_prev)
}

/// `v ← momentum·v + grad; param ← param − lr·v`
pub fn sgd_step<P: Parameters>(state: &mut Sgd, params: &mut P, grads: &P) -> Result<()> {
    state.step(params, grads)
}
