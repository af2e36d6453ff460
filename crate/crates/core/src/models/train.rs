use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{JointModel, ModelConfig, SingleModel};
use crate::align::AlignedWindow;
use crate::error::{Error, Result};
use crate::neural::{Parameters, Sgd};
use crate::template_miner::{Modality, TemplateId};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A model that can produce the loss and gradient of one example.
pub trait Trainable: Parameters {
    type Example;

    /// `(span loss, log loss)`; the component a model does not predict is 0.
    fn example_grad(&self, ex: &Self::Example, grad: &mut Self) -> Result<(f64, f64)>;
}

impl Trainable for SingleModel {
    type Example = (Vec<TemplateId>, TemplateId);

    fn example_grad(
        &self,
        (inputs, target): &Self::Example,
        grad: &mut Self,
    ) -> Result<(f64, f64)> {
        let l = self.loss_and_grad(inputs, *target, grad)?;
        Ok(match self.modality {
            Modality::Span => (l, 0.0),
            Modality::Log => (0.0, l),
        })
    }
}

impl Trainable for JointModel {
    type Example = AlignedWindow;

    fn example_grad(&self, w: &AlignedWindow, grad: &mut Self) -> Result<(f64, f64)> {
        self.loss_and_grad(
            &w.span_inputs,
            &w.log_block,
            w.span_target,
            w.log_target,
            grad,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss_span: f64,
    pub mean_loss_log: f64,
    pub mean_loss_total: f64,
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Minibatch SGD with momentum; the batch gradient is the example mean.
///
/// Examples are reshuffled every epoch from a generator seeded by
/// `cfg.seed`. `on_checkpoint(epoch, model)` runs every `checkpoint_every`
/// epochs and after the last one.
pub fn train<M: Trainable>(
    model: &mut M,
    data: &[M::Example],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &M) -> Result<()>,
) -> Result<Vec<EpochLoss>> {
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = shuffle_rng(cfg.seed);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, model);
    let mut grad = model.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_span, mut sum_log) = (0.0, 0.0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            for t in grad.tensors_mut() {
                t.fill(0.0);
            }
            let (mut bs, mut bl) = (0.0, 0.0);
            for &i in batch {
                let (s, l) = model.example_grad(&data[i], &mut grad)?;
                bs += s;
                bl += l;
            }
            if !(bs + bl).is_finite() || !grad.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: bs + bl,
                });
            }
            grad.scale(1.0 / batch.len() as f64);
            opt.step(model, &grad)?;
            sum_span += bs;
            sum_log += bl;
        }
        let n = data.len() as f64;
        let e = EpochLoss {
            epoch,
            mean_loss_span: sum_span / n,
            mean_loss_log: sum_log / n,
            mean_loss_total: (sum_span + sum_log) / n,
        };
        log::debug!("epoch {epoch}: loss {:.6}", e.mean_loss_total);
        curve.push(e);
        if epoch == cfg.epochs || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
            on_checkpoint(epoch, model)?;
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Log,
    Trace,
    Joint,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" | "logs" => Ok(ModelKind::Log),
            "trace" | "traces" | "span" => Ok(ModelKind::Trace),
            "joint" => Ok(ModelKind::Joint),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "lowercase")]
pub enum ModelParams {
    Single(SingleModel),
    Joint(JointModel),
}

/// Versioned JSON dump of a model with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub seed: u64,
    pub epochs_completed: usize,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub model: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn single(&self) -> Option<&SingleModel> {
        match &self.model {
            ModelParams::Single(m) => Some(m),
            ModelParams::Joint(_) => None,
        }
    }

    pub fn joint(&self) -> Option<&JointModel> {
        match &self.model {
            ModelParams::Joint(m) => Some(m),
            ModelParams::Single(_) => None,
        }
    }
}
