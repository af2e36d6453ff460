//! Anomaly detection over distributed-system telemetry by next-template
//! prediction on application logs, trace spans, or both jointly.
//!
//! The pipeline: [`ingest`] raw records, mine templates with
//! [`template_miner`], build word dictionaries and padded templates with
//! [`vocab`], assemble windows and the temporal split with [`align`], train
//! the sequence models in [`models`] (built on [`neural`]), score traces and
//! logs in [`detect`], and read span/log vectors back out with [`embed`].
//! [`synth`] generates labeled corpora and [`pipeline`] wires the stages
//! together through files.

pub mod align;
pub mod config;
pub mod detect;
pub mod embed;
pub mod error;
pub mod ingest;
pub mod models;
pub mod neural;
pub mod pipeline;
pub mod synth;
pub mod template_miner;
pub mod vocab;

pub use error::{Error, Result};
pub use template_miner::{Modality, TemplateId};
