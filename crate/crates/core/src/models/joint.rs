use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Branch, ModelConfig};
use crate::error::Result;
use crate::neural::loss::{cross_entropy, softmax, softmax_cross_entropy_grad};
use crate::neural::{Linear, Parameters, Tensor2};
use crate::template_miner::TemplateId;
use crate::vocab::TemplateBank;

/// Span branch and log branch whose final hidden states are concatenated,
/// passed through a shared linear fusion layer and then two output heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub trace: Branch,
    pub log: Branch,
    pub fusion: Linear,
    pub span_head: Linear,
    pub log_head: Linear,
}

/// `L(span) + L(log)`
pub fn joint_loss(
    span_probs: &[f64],
    log_probs: &[f64],
    span_target: TemplateId,
    log_target: TemplateId,
) -> Result<f64> {
    Ok(cross_entropy(span_probs, span_target.index())?
        + cross_entropy(log_probs, log_target.index())?)
}

impl JointModel {
    pub fn new<R: Rng>(
        span_bank: TemplateBank,
        span_words: usize,
        log_bank: TemplateBank,
        log_words: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let span_vocab = span_bank.len();
        let log_vocab = log_bank.len();
        let trace = Branch::new(span_bank, span_words, cfg, rng);
        let log = Branch::new(log_bank, log_words, cfg, rng);
        let fusion = Linear::new(trace.hidden_dim() + log.hidden_dim(), cfg.fusion_dim, rng);
        let span_head = Linear::new(cfg.fusion_dim, span_vocab, rng);
        let log_head = Linear::new(cfg.fusion_dim, log_vocab, rng);
        JointModel {
            trace,
            log,
            fusion,
            span_head,
            log_head,
        }
    }

    pub fn span_vocab(&self) -> usize {
        self.span_head.output_dim()
    }

    pub fn log_vocab(&self) -> usize {
        self.log_head.output_dim()
    }

    fn fused(
        &self,
        spans: &[TemplateId],
        logs: &[TemplateId],
    ) -> Result<(Vec<f64>, Vec<f64>, Caches)> {
        let logs: Vec<TemplateId> = logs
            .iter()
            .copied()
            .filter(|&t| t != TemplateId::NOLOG)
            .collect();
        let (hs, cs) = self.trace.forward(spans)?;
        let (hl, cl) = self.log.forward(&logs)?;
        let mut concat = hs;
        concat.extend_from_slice(&hl);
        let z = self.fusion.forward(&concat);
        Ok((concat, z, Caches { span: cs, log: cl }))
    }

    /// `(span distribution, log distribution)` for a span window and its log
    /// block. Block padding is skipped; an empty block leaves the log branch
    /// at its zero state.
    pub fn forward(
        &self,
        spans: &[TemplateId],
        logs: &[TemplateId],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, z, _) = self.fused(spans, logs)?;
        Ok((
            softmax(&self.span_head.forward(&z)),
            softmax(&self.log_head.forward(&z)),
        ))
    }

    /// Returns `(span loss, log loss)` and adds the joint gradient into `grad`.
    pub fn loss_and_grad(
        &self,
        spans: &[TemplateId],
        logs: &[TemplateId],
        span_target: TemplateId,
        log_target: TemplateId,
        grad: &mut JointModel,
    ) -> Result<(f64, f64)> {
        let (concat, z, caches) = self.fused(spans, logs)?;
        let ps = softmax(&self.span_head.forward(&z));
        let pl = softmax(&self.log_head.forward(&z));
        let ls = cross_entropy(&ps, span_target.index())?;
        let ll = cross_entropy(&pl, log_target.index())?;

        let mut dz = self.span_head.backward(
            &z,
            &softmax_cross_entropy_grad(&ps, span_target.index()),
            &mut grad.span_head,
        );
        let dz_log = self.log_head.backward(
            &z,
            &softmax_cross_entropy_grad(&pl, log_target.index()),
            &mut grad.log_head,
        );
        for (a, b) in dz.iter_mut().zip(&dz_log) {
            *a += b;
        }
        let dconcat = self.fusion.backward(&concat, &dz, &mut grad.fusion);
        let split = self.trace.hidden_dim();
        self.trace
            .backward(&caches.span, &dconcat[..split], &mut grad.trace)?;
        self.log
            .backward(&caches.log, &dconcat[split..], &mut grad.log)?;
        Ok((ls, ll))
    }
}

struct Caches {
    span: super::BranchCache,
    log: super::BranchCache,
}

impl Parameters for JointModel {
    fn tensors(&self) -> Vec<&Tensor2> {
        let mut v = self.trace.tensors();
        v.extend(self.log.tensors());
        v.extend(self.fusion.tensors());
        v.extend(self.span_head.tensors());
        v.extend(self.log_head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v = self.trace.tensors_mut();
        v.extend(self.log.tensors_mut());
        v.extend(self.fusion.tensors_mut());
        v.extend(self.span_head.tensors_mut());
        v.extend(self.log_head.tensors_mut());
        v
    }
}
