//! Next-template-prediction models built from the neural toolkit: a
//! single-modality model (logs or spans) and the joint model that fuses a
//! span branch with a log branch.

mod joint;
mod single;
mod train;

pub use joint::{joint_loss, JointModel};
pub use single::SingleModel;
pub use train::{
    train, Checkpoint, EpochLoss, ModelKind, ModelParams, TrainConfig, Trainable,
    CHECKPOINT_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{CellStack, Embedding, Parameters, StackCache, Tensor2};
use crate::template_miner::TemplateId;
use crate::vocab::{PaddedTemplate, TemplateBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub fusion_dim: usize,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 256,
            hidden_dim: 256,
            layers: 2,
            fusion_dim: 256,
            pooling: Pooling::Mean,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0
            || self.hidden_dim == 0
            || self.layers == 0
            || self.fusion_dim == 0
        {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Word embeddings pooled into one vector per template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEncoder {
    pub words: Embedding,
    pub bank: TemplateBank,
    pub pooling: Pooling,
}

impl TemplateEncoder {
    pub fn dim(&self) -> usize {
        self.words.dim()
    }

    /// Number of template ids this encoder knows, UNKNOWN included.
    pub fn templates(&self) -> usize {
        self.bank.len()
    }

    fn word_rows(&self, id: TemplateId) -> Result<Vec<usize>> {
        let words = self.bank.words(id).ok_or(Error::IndexOutOfRange {
            index: id.index(),
            len: self.bank.len(),
        })?;
        Ok(words.map(|w| w as usize).collect())
    }

    fn pool(&self, rows: &[usize]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        if rows.is_empty() {
            return Ok(out);
        }
        for &r in rows {
            if r >= self.words.vocab() {
                return Err(Error::IndexOutOfRange {
                    index: r,
                    len: self.words.vocab(),
                });
            }
        }
        match self.pooling {
            Pooling::Mean => {
                let scale = 1.0 / rows.len() as f64;
                for &r in rows {
                    crate::neural::tensor::axpy(scale, self.words.table.row(r), &mut out);
                }
            }
            Pooling::Max => {
                out.copy_from_slice(self.words.table.row(rows[0]));
                for &r in &rows[1..] {
                    for (o, &v) in out.iter_mut().zip(self.words.table.row(r)) {
                        *o = o.max(v);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Pooled vector of a template id.
    pub fn encode(&self, id: TemplateId) -> Result<Vec<f64>> {
        self.pool(&self.word_rows(id)?)
    }

    /// Pooled vector over the non-pad positions of a padded template.
    pub fn encode_template(&self, t: &PaddedTemplate) -> Result<Vec<f64>> {
        let rows: Vec<usize> = t
            .word_indices
            .iter()
            .filter(|&&w| w != self.bank.pad_index)
            .map(|&w| w as usize)
            .collect();
        self.pool(&rows)
    }

    fn backward(&self, id: TemplateId, d: &[f64], grad: &mut Embedding) -> Result<()> {
        let rows = self.word_rows(id)?;
        if rows.is_empty() {
            return Ok(());
        }
        match self.pooling {
            Pooling::Mean => {
                let scale = 1.0 / rows.len() as f64;
                for r in rows {
                    crate::neural::tensor::axpy(scale, d, grad.table.row_mut(r));
                }
            }
            Pooling::Max => {
                for (j, &dj) in d.iter().enumerate() {
                    // first row attaining the max receives the gradient
                    let mut best = rows[0];
                    for &r in &rows[1..] {
                        if self.words.table.row(r)[j] > self.words.table.row(best)[j] {
                            best = r;
                        }
                    }
                    grad.table.row_mut(best)[j] += dj;
                }
            }
        }
        Ok(())
    }
}

/// Encoder plus recurrent stack over a template sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub encoder: TemplateEncoder,
    pub stack: CellStack,
}

pub(crate) struct BranchCache {
    ids: Vec<TemplateId>,
    stack: StackCache,
}

impl Branch {
    pub fn new<R: rand::Rng>(
        bank: TemplateBank,
        words: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        Branch {
            encoder: TemplateEncoder {
                words: Embedding::new(words, cfg.embedding_dim, rng),
                bank,
                pooling: cfg.pooling,
            },
            stack: CellStack::new(cfg.embedding_dim, cfg.hidden_dim, cfg.layers, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.stack.hidden_dim()
    }

    pub(crate) fn forward(&self, ids: &[TemplateId]) -> Result<(Vec<f64>, BranchCache)> {
        let inputs = ids
            .iter()
            .map(|&id| self.encoder.encode(id))
            .collect::<Result<Vec<_>>>()?;
        let (h, stack) = self.stack.forward(&inputs);
        Ok((
            h,
            BranchCache {
                ids: ids.to_vec(),
                stack,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        cache: &BranchCache,
        dh: &[f64],
        grad: &mut Branch,
    ) -> Result<()> {
        let d_inputs = self.stack.backward(&cache.stack, dh, &mut grad.stack);
        for (&id, d) in cache.ids.iter().zip(&d_inputs) {
            self.encoder.backward(id, d, &mut grad.encoder.words)?;
        }
        Ok(())
    }
}

impl Parameters for Branch {
    fn tensors(&self) -> Vec<&Tensor2> {
        let mut v = vec![&self.encoder.words.table];
        v.extend(self.stack.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v = vec![&mut self.encoder.words.table];
        v.extend(self.stack.tensors_mut());
        v
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
