use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Branch, ModelConfig};
use crate::error::Result;
use crate::neural::loss::{cross_entropy, softmax, softmax_cross_entropy_grad};
use crate::neural::{Linear, Parameters, Tensor2};
use crate::template_miner::{Modality, TemplateId};
use crate::vocab::TemplateBank;

/// Encoder, recurrent stack and one softmax head over the template vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleModel {
    pub modality: Modality,
    pub branch: Branch,
    pub head: Linear,
}

impl SingleModel {
    pub fn new<R: Rng>(bank: TemplateBank, words: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let modality = bank.modality;
        let templates = bank.len();
        let branch = Branch::new(bank, words, cfg, rng);
        let head = Linear::new(branch.hidden_dim(), templates, rng);
        SingleModel {
            modality,
            branch,
            head,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.head.output_dim()
    }

    /// Final hidden state of the stack after consuming `inputs`.
    pub fn hidden(&self, inputs: &[TemplateId]) -> Result<Vec<f64>> {
        Ok(self.branch.forward(inputs)?.0)
    }

    /// Distribution over the next template.
    pub fn forward(&self, inputs: &[TemplateId]) -> Result<Vec<f64>> {
        let h = self.hidden(inputs)?;
        Ok(softmax(&self.head.forward(&h)))
    }

    /// Cross-entropy of one example; adds its gradient into `grad`.
    pub fn loss_and_grad(
        &self,
        inputs: &[TemplateId],
        target: TemplateId,
        grad: &mut SingleModel,
    ) -> Result<f64> {
        let (h, cache) = self.branch.forward(inputs)?;
        let probs = softmax(&self.head.forward(&h));
        let loss = cross_entropy(&probs, target.index())?;
        let dlogits = softmax_cross_entropy_grad(&probs, target.index());
        let dh = self.head.backward(&h, &dlogits, &mut grad.head);
        self.branch.backward(&cache, &dh, &mut grad.branch)?;
        Ok(loss)
    }
}

impl Parameters for SingleModel {
    fn tensors(&self) -> Vec<&Tensor2> {
        let mut v = self.branch.tensors();
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v = self.branch.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
}
