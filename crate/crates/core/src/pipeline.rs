//! The end-to-end stages, each available in memory and as a file-to-file
//! command. Every command writes a `manifest_<stage>.json` holding the
//! effective configuration and SHA-256 hashes of what it read and wrote.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{
    make_single_log_sequences, make_windows, span_sequences, temporal_split, window_drafts,
    AlignedWindow, Split, TemplatedLog, TemplatedSpan, TemplatedTrace,
};
use crate::config::RunConfig;
use crate::detect::{
    evaluate, in_top_k, predict_at, sweep_threshold, AnomalyVerdict, MetricReport,
};
use crate::embed::{self, EmbeddingTable, Projection};
use crate::error::{Error, Result};
use crate::ingest::{
    augment_trace, read_jsonl, read_logs_with, read_traces_with, write_jsonl, Adapter, Label,
    RawLogLine, RawTrace, END_SPAN, START_SPAN,
};
use crate::models::{
    train, Checkpoint, EpochLoss, JointModel, ModelKind, ModelParams, SingleModel, TemplateEncoder,
    CHECKPOINT_VERSION,
};
use crate::synth::{self, AnomalyKind, Corpus, TruthRecord};
use crate::template_miner::{span_descriptor, MinerState, Modality, TemplateId, TemplateRecord};
use crate::vocab::{DictionaryEntry, TemplateBank, WordDictionary};

pub type Sequence = (Vec<TemplateId>, TemplateId);

/// Frozen miners and word dictionaries for both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub span_miner: MinerState,
    pub log_miner: MinerState,
    pub span_dict: WordDictionary,
    pub log_dict: WordDictionary,
}

impl Artifacts {
    pub fn span_bank(&self, cfg: &RunConfig) -> TemplateBank {
        TemplateBank::build(
            self.span_miner.templates(),
            &self.span_dict,
            cfg.dataset.max_span_size,
        )
    }

    pub fn log_bank(&self, cfg: &RunConfig) -> TemplateBank {
        TemplateBank::build(
            self.log_miner.templates(),
            &self.log_dict,
            cfg.dataset.max_log_size,
        )
    }

    pub fn templates(&self, modality: Modality) -> &[TemplateRecord] {
        match modality {
            Modality::Span => self.span_miner.templates(),
            Modality::Log => self.log_miner.templates(),
        }
    }

    pub fn dict(&self, modality: Modality) -> &WordDictionary {
        match modality {
            Modality::Span => &self.span_dict,
            Modality::Log => &self.log_dict,
        }
    }
}

/// Mines both modalities from the training side of the temporal split.
///
/// The sentinel spans are mined first, so they always hold ids 1 and 2.
pub fn mine(
    traces: &[RawTrace],
    logs: &[RawLogLine],
    cfg: &RunConfig,
) -> Result<(Artifacts, Split)> {
    if traces.is_empty() {
        return Err(Error::Data("no traces to mine".into()));
    }
    let split = temporal_split(traces, logs, cfg.dataset.split())?;
    let mut span_miner = MinerState::new(cfg.miner.spans.clone(), Modality::Span)?;
    span_miner.mine(START_SPAN);
    span_miner.mine(END_SPAN);
    for t in &split.train_traces {
        for s in &t.spans {
            span_miner.mine(&span_descriptor(s));
        }
    }
    let mut log_miner = MinerState::new(cfg.miner.logs.clone(), Modality::Log)?;
    for l in sorted_logs(&split.train_logs) {
        log_miner.mine(&l.message);
    }
    if log_miner.is_empty() {
        return Err(Error::Data(
            "no log lines on the training side of the split".into(),
        ));
    }
    let span_dict = WordDictionary::build(span_miner.templates(), Modality::Span)?;
    let log_dict = WordDictionary::build(log_miner.templates(), Modality::Log)?;
    Ok((
        Artifacts {
            span_miner,
            log_miner,
            span_dict,
            log_dict,
        },
        split,
    ))
}

fn sorted_logs(logs: &[RawLogLine]) -> Vec<&RawLogLine> {
    let mut v: Vec<&RawLogLine> = logs.iter().collect();
    v.sort_by_key(|l| l.timestamp);
    v
}

pub fn template_trace(trace: &RawTrace, miner: &MinerState) -> TemplatedTrace {
    let aug = augment_trace(trace);
    TemplatedTrace {
        trace_id: trace.trace_id.clone(),
        label: trace.label,
        spans: aug
            .spans
            .iter()
            .map(|s| TemplatedSpan {
                start: s.start_time,
                end: s.end_time,
                template: miner.match_only(&span_descriptor(s)),
            })
            .collect(),
    }
}

/// Span templates seen in exactly one workload, keyed by workload name.
///
/// Workloads come from the truth records; traces without one are skipped.
pub fn span_templates_by_workload(
    miner: &MinerState,
    traces: &[RawTrace],
    truth: &[TruthRecord],
) -> BTreeMap<String, BTreeSet<TemplateId>> {
    let workload: BTreeMap<&str, &str> = truth
        .iter()
        .filter(|t| !t.workload.is_empty())
        .map(|t| (t.trace_id.as_str(), t.workload.as_str()))
        .collect();
    let mut seen: BTreeMap<TemplateId, BTreeSet<&str>> = BTreeMap::new();
    for t in traces {
        let Some(&w) = workload.get(t.trace_id.as_str()) else {
            continue;
        };
        for s in template_trace(t, miner).spans {
            if !s.template.is_unknown() {
                seen.entry(s.template).or_default().insert(w);
            }
        }
    }
    let mut out: BTreeMap<String, BTreeSet<TemplateId>> = BTreeMap::new();
    for (id, ws) in seen {
        if let [w] = ws.into_iter().collect::<Vec<_>>()[..] {
            out.entry(w.to_string()).or_default().insert(id);
        }
    }
    out
}

/// Time-ordered; equal timestamps keep input order.
pub fn template_logs(logs: &[RawLogLine], miner: &MinerState) -> Vec<TemplatedLog> {
    sorted_logs(logs)
        .into_iter()
        .map(|l| TemplatedLog {
            timestamp: l.timestamp,
            template: miner.match_only(&l.message),
            label: l.label,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub split_time: u64,
    pub train_traces: usize,
    pub test_traces: usize,
    pub test_anomalous: usize,
    pub discarded_anomalous: usize,
    pub train_windows: usize,
    pub dropped_windows: usize,
    pub train_span_sequences: usize,
    pub train_log_sequences: usize,
    pub unknown_test_spans: usize,
    pub unknown_test_logs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_windows: Vec<AlignedWindow>,
    pub train_span_seqs: Vec<Sequence>,
    pub train_log_seqs: Vec<Sequence>,
    pub test_traces: Vec<TemplatedTrace>,
    pub test_logs: Vec<TemplatedLog>,
    pub stats: DatasetStats,
}

pub fn build_dataset(art: &Artifacts, split: &Split, cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let train_logs = template_logs(&split.train_logs, &art.log_miner);
    let mut stats = DatasetStats {
        split_time: split.split_time,
        train_traces: split.train_traces.len(),
        test_traces: split.test_traces.len(),
        test_anomalous: split
            .test_traces
            .iter()
            .filter(|t| t.label.is_anomaly())
            .count(),
        discarded_anomalous: split.discarded_anomalous,
        ..Default::default()
    };
    let mut train_windows = Vec::new();
    let mut train_span_seqs = Vec::new();
    for t in &split.train_traces {
        let tt = template_trace(t, &art.span_miner);
        let set = make_windows(&tt, &train_logs, d.window_size, d.max_block_logs);
        stats.dropped_windows += set.dropped;
        train_windows.extend(set.windows);
        train_span_seqs.extend(span_sequences(&tt, d.window_size));
    }
    let log_ids: Vec<TemplateId> = train_logs.iter().map(|l| l.template).collect();
    let train_log_seqs = make_single_log_sequences(&log_ids, d.log_history);

    let test_traces: Vec<TemplatedTrace> = split
        .test_traces
        .iter()
        .map(|t| template_trace(t, &art.span_miner))
        .collect();
    let test_logs = template_logs(&split.test_logs, &art.log_miner);
    stats.train_windows = train_windows.len();
    stats.train_span_sequences = train_span_seqs.len();
    stats.train_log_sequences = train_log_seqs.len();
    stats.unknown_test_spans = test_traces
        .iter()
        .flat_map(|t| &t.spans)
        .filter(|s| s.template.is_unknown())
        .count();
    stats.unknown_test_logs = test_logs.iter().filter(|l| l.template.is_unknown()).count();
    Ok(Dataset {
        train_windows,
        train_span_seqs,
        train_log_seqs,
        test_traces,
        test_logs,
        stats,
    })
}

/// Initializes and trains a model of `kind`, returning its final checkpoint.
pub fn train_model(
    kind: ModelKind,
    art: &Artifacts,
    ds: &Dataset,
    cfg: &RunConfig,
) -> Result<(Checkpoint, Vec<EpochLoss>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    let (model, curve) = match kind {
        ModelKind::Joint => {
            let mut m = JointModel::new(
                art.span_bank(cfg),
                art.span_dict.len(),
                art.log_bank(cfg),
                art.log_dict.len(),
                &cfg.model,
                &mut rng,
            );
            let curve = train(&mut m, &ds.train_windows, &tcfg, |_, _| Ok(()))?;
            (ModelParams::Joint(m), curve)
        }
        ModelKind::Trace | ModelKind::Log => {
            let (bank, words, data) = if kind == ModelKind::Trace {
                (art.span_bank(cfg), art.span_dict.len(), &ds.train_span_seqs)
            } else {
                (art.log_bank(cfg), art.log_dict.len(), &ds.train_log_seqs)
            };
            let mut m = SingleModel::new(bank, words, &cfg.model, &mut rng);
            let curve = train(&mut m, data, &tcfg, |_, _| Ok(()))?;
            (ModelParams::Single(m), curve)
        }
    };
    Ok((
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind,
            seed: cfg.seed,
            epochs_completed: curve.len(),
            model_config: cfg.model.clone(),
            train_config: tcfg,
            model,
        },
        curve,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub kind: ModelKind,
    pub threshold: f64,
    pub traces: usize,
    pub windows: usize,
    pub trace: MetricReport,
    /// Per scored log target; absent for the trace-only model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<MetricReport>,
    pub sweep: Vec<SweepPoint>,
}

impl fmt::Display for DetectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "model {:?}: {} traces, {} windows, threshold {:.2}",
            self.kind, self.traces, self.windows, self.threshold
        )?;
        writeln!(
            f,
            "{:<6} {:>8} {:>9} {:>7} {:>7}",
            "level", "accuracy", "precision", "recall", "f1"
        )?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, m: &MetricReport| {
            writeln!(
                f,
                "{:<6} {:>8.4} {:>9.4} {:>7.4} {:>7.4}",
                name, m.accuracy, m.precision, m.recall, m.f1
            )
        };
        row(f, "trace", &self.trace)?;
        if let Some(m) = &self.log {
            row(f, "log", m)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub verdicts: Vec<AnomalyVerdict>,
    pub report: DetectionReport,
}

struct TraceScore {
    errors: Vec<bool>,
    log_flags: Vec<(Label, Label)>,
}

fn score_joint(
    m: &JointModel,
    ds_trace: &TemplatedTrace,
    logs: &[TemplatedLog],
    cfg: &RunConfig,
) -> Result<TraceScore> {
    let d = &cfg.dataset;
    let k = &cfg.detect;
    let mut s = TraceScore {
        errors: Vec::new(),
        log_flags: Vec::new(),
    };
    for w in window_drafts(ds_trace, logs, d.window_size, d.max_block_logs) {
        let block: Vec<TemplateId> = w.block.iter().map(|&j| logs[j].template).collect();
        let (ps, pl) = m.forward(&w.span_inputs, &block)?;
        let mut err = !in_top_k(&ps, w.span_target, k.trace_top_k);
        if let Some(j) = w.log_target {
            let miss = !in_top_k(&pl, logs[j].template, k.logs_top_k);
            err |= miss;
            let flag = if miss { Label::Anomaly } else { Label::Normal };
            s.log_flags
                .push((flag, logs[j].label.unwrap_or(Label::Normal)));
        }
        s.errors.push(err);
    }
    Ok(s)
}

fn score_spans(m: &SingleModel, trace: &TemplatedTrace, cfg: &RunConfig) -> Result<TraceScore> {
    let mut errors = Vec::new();
    for (inputs, target) in span_sequences(trace, cfg.dataset.window_size) {
        let p = m.forward(&inputs)?;
        errors.push(!in_top_k(&p, target, cfg.detect.trace_top_k));
    }
    Ok(TraceScore {
        errors,
        log_flags: Vec::new(),
    })
}

/// Flags for every log that has a full history in the test stream.
fn score_log_stream(
    m: &SingleModel,
    logs: &[TemplatedLog],
    cfg: &RunConfig,
) -> Result<Vec<Option<bool>>> {
    let h = cfg.dataset.log_history;
    let ids: Vec<TemplateId> = logs.iter().map(|l| l.template).collect();
    let mut flags = vec![None; logs.len()];
    for (i, (inputs, target)) in make_single_log_sequences(&ids, h).into_iter().enumerate() {
        let p = m.forward(&inputs)?;
        flags[i + h] = Some(!in_top_k(&p, target, cfg.detect.logs_top_k));
    }
    Ok(flags)
}

/// Scores every test trace with `ck` and picks the grid threshold with the
/// best trace-level F1.
///
/// A trace's score is the fraction of its windows that count as errors. For
/// the joint model a window is an error when the next span is outside the
/// top `trace_top_k` or its next log is outside the top `logs_top_k`. The
/// logs-only model scores a trace by the flagged fraction of the log lines
/// inside the trace's interval. Traces without any scorable window get 0.
pub fn detect(
    ck: &Checkpoint,
    traces: &[TemplatedTrace],
    logs: &[TemplatedLog],
    cfg: &RunConfig,
) -> Result<Detection> {
    cfg.detect.validate()?;
    let stream_flags = match (&ck.model, ck.kind) {
        (ModelParams::Single(m), ModelKind::Log) => Some(score_log_stream(m, logs, cfg)?),
        _ => None,
    };
    let mut scored = Vec::with_capacity(traces.len());
    for t in traces {
        let s = match (&ck.model, ck.kind) {
            (ModelParams::Joint(m), ModelKind::Joint) => score_joint(m, t, logs, cfg)?,
            (ModelParams::Single(m), ModelKind::Trace) => score_spans(m, t, cfg)?,
            (ModelParams::Single(_), ModelKind::Log) => {
                let flags = stream_flags.as_ref().expect("computed above");
                let start = t.spans.first().map_or(0, |s| s.start);
                let end = t.spans.last().map_or(0, |s| s.end);
                let lo = logs.partition_point(|l| l.timestamp < start);
                let hi = logs.partition_point(|l| l.timestamp <= end);
                let mut s = TraceScore {
                    errors: Vec::new(),
                    log_flags: Vec::new(),
                };
                for j in lo..hi {
                    if let Some(miss) = flags[j] {
                        s.errors.push(miss);
                        let flag = if miss { Label::Anomaly } else { Label::Normal };
                        s.log_flags
                            .push((flag, logs[j].label.unwrap_or(Label::Normal)));
                    }
                }
                s
            }
            _ => {
                return Err(Error::Data(format!(
                    "checkpoint kind {:?} does not match its parameters",
                    ck.kind
                )))
            }
        };
        scored.push(s);
    }

    let rates: Vec<f64> = scored
        .iter()
        .map(|s| {
            if s.errors.is_empty() {
                0.0
            } else {
                s.errors.iter().filter(|&&e| e).count() as f64 / s.errors.len() as f64
            }
        })
        .collect();
    let labeled: Vec<(f64, Label)> = rates
        .iter()
        .zip(traces)
        .map(|(&r, t)| (r, t.label))
        .collect();
    let truth: Vec<Label> = traces.iter().map(|t| t.label).collect();
    let grid = &cfg.detect.threshold_grid;
    let sweep = grid
        .iter()
        .map(|&theta| {
            let preds: Vec<Label> = rates.iter().map(|&r| predict_at(r, theta)).collect();
            evaluate(&preds, &truth).map(|m| SweepPoint {
                threshold: theta,
                f1: m.f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (threshold, trace_report) = match sweep_threshold(&labeled, grid) {
        Ok(best) => best,
        Err(Error::Data(msg)) => {
            log::warn!("{msg}; using the smallest grid threshold");
            let theta = grid[0];
            let preds: Vec<Label> = rates.iter().map(|&r| predict_at(r, theta)).collect();
            (theta, evaluate(&preds, &truth)?)
        }
        Err(e) => return Err(e),
    };

    let all_flags: Vec<(Label, Label)> = scored
        .iter()
        .flat_map(|s| s.log_flags.iter().copied())
        .collect();
    let log_report = if ck.kind == ModelKind::Trace || all_flags.is_empty() {
        None
    } else {
        let (p, t): (Vec<Label>, Vec<Label>) = all_flags.into_iter().unzip();
        Some(evaluate(&p, &t)?)
    };
    let windows = scored.iter().map(|s| s.errors.len()).sum();
    let verdicts = traces
        .iter()
        .zip(scored)
        .zip(&rates)
        .map(|((t, s), &rate)| AnomalyVerdict {
            trace_id: t.trace_id.clone(),
            span_error_rate: rate,
            windows: s.errors.len(),
            trace_label_pred: predict_at(rate, threshold),
            true_label: t.label,
            per_log_flags: s.log_flags.into_iter().map(|(f, _)| f).collect(),
        })
        .collect();
    Ok(Detection {
        verdicts,
        report: DetectionReport {
            kind: ck.kind,
            threshold,
            traces: traces.len(),
            windows,
            trace: trace_report,
            log: log_report,
            sweep,
        },
    })
}

/// The template encoder of `modality` inside a checkpoint.
pub fn encoder(ck: &Checkpoint, modality: Modality) -> Result<&TemplateEncoder> {
    match &ck.model {
        ModelParams::Single(m) if m.modality == modality => Ok(&m.branch.encoder),
        ModelParams::Single(m) => Err(Error::Data(format!(
            "checkpoint holds a {} model, not {modality}",
            m.modality
        ))),
        ModelParams::Joint(m) => Ok(match modality {
            Modality::Span => &m.trace.encoder,
            Modality::Log => &m.log.encoder,
        }),
    }
}

pub fn embeddings(
    ck: &Checkpoint,
    art: &Artifacts,
    modality: Modality,
) -> Result<(EmbeddingTable, Projection)> {
    let provenance = sha256_hex(&ck.to_bytes()?);
    let table = embed::extract(
        encoder(ck, modality)?,
        art.dict(modality),
        art.templates(modality),
        &provenance,
    )?;
    let projection = embed::project_2d(&table)?;
    Ok((table, projection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindRecall {
    pub kind: AnomalyKind,
    pub detected: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub matched: usize,
    pub unmatched: usize,
    pub metrics: MetricReport,
    pub by_kind: Vec<KindRecall>,
}

/// Compares stored verdicts with a truth file by trace id.
pub fn eval(verdicts: &[AnomalyVerdict], truth: &[TruthRecord]) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &TruthRecord> =
        truth.iter().map(|t| (t.trace_id.as_str(), t)).collect();
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    let mut kinds: BTreeMap<AnomalyKind, (usize, usize)> = BTreeMap::new();
    let mut unmatched = 0;
    for v in verdicts {
        let Some(t) = by_id.get(v.trace_id.as_str()) else {
            unmatched += 1;
            continue;
        };
        preds.push(v.trace_label_pred);
        labels.push(t.label);
        if let Some(k) = t.kind {
            let e = kinds.entry(k).or_default();
            e.1 += 1;
            if v.trace_label_pred.is_anomaly() {
                e.0 += 1;
            }
        }
    }
    if preds.is_empty() {
        return Err(Error::Data("no verdict matches a truth record".into()));
    }
    Ok(EvalReport {
        matched: preds.len(),
        unmatched,
        metrics: evaluate(&preds, &labels)?,
        by_kind: kinds
            .into_iter()
            .map(|(kind, (detected, total))| KindRecall {
                kind,
                detected,
                total,
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// File-to-file commands

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..])
}

fn hash_file(path: &Path) -> Result<String> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config: RunConfig,
    /// File name → SHA-256 of the contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub stats: serde_json::Value,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn write_manifest(
    out: &Path,
    stage: &str,
    cfg: &RunConfig,
    inputs: &[&Path],
    outputs: &[PathBuf],
    stats: serde_json::Value,
) -> Result<PathBuf> {
    let mut m = Manifest {
        stage: stage.to_string(),
        config: cfg.clone(),
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
        stats,
    };
    for p in inputs {
        m.inputs.insert(file_name(p), hash_file(p)?);
    }
    for p in outputs {
        m.outputs.insert(file_name(p), hash_file(p)?);
    }
    let path = out.join(format!("manifest_{stage}.json"));
    let text = serde_json::to_string_pretty(&m)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn adapter(cfg: &RunConfig) -> Result<Adapter> {
    match &cfg.input.adapter {
        Some(p) => Adapter::from_file(p),
        None => Ok(Adapter::default()),
    }
}

fn read_inputs(
    logs: &Path,
    traces: &Path,
    cfg: &RunConfig,
) -> Result<(Vec<RawTrace>, Vec<RawLogLine>)> {
    let a = adapter(cfg)?;
    let (logs, log_stats) = read_logs_with(logs, cfg.input.format, &a)?;
    let (traces, trace_stats) = read_traces_with(traces, cfg.input.format, &a)?;
    if log_stats.malformed + trace_stats.malformed > 0 {
        log::warn!(
            "skipped {} malformed log rows and {} malformed span rows",
            log_stats.malformed,
            trace_stats.malformed
        );
    }
    Ok((traces, logs))
}

pub const SPAN_MINER_FILE: &str = "miner_spans.json";
pub const LOG_MINER_FILE: &str = "miner_logs.json";

fn modality_name(m: Modality) -> &'static str {
    match m {
        Modality::Span => "spans",
        Modality::Log => "logs",
    }
}

pub fn save_artifacts(art: &Artifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for (miner, dict) in [
        (&art.span_miner, &art.span_dict),
        (&art.log_miner, &art.log_dict),
    ] {
        let name = modality_name(miner.modality());
        let state = dir.join(format!("miner_{name}.json"));
        write_json(&state, miner)?;
        let templates = dir.join(format!("templates_{name}.jsonl"));
        write_jsonl(&templates, miner.templates())?;
        let vocab = dir.join(format!("vocab_{name}.jsonl"));
        write_jsonl(&vocab, dict.entries())?;
        written.extend([state, templates, vocab]);
    }
    Ok(written)
}

pub fn load_artifacts(dir: &Path) -> Result<Artifacts> {
    let span_miner: MinerState = read_json(&dir.join(SPAN_MINER_FILE))?;
    let log_miner: MinerState = read_json(&dir.join(LOG_MINER_FILE))?;
    let span_dict = WordDictionary::from_entries(&read_jsonl::<DictionaryEntry>(
        &dir.join("vocab_spans.jsonl"),
    )?)?;
    let log_dict = WordDictionary::from_entries(&read_jsonl::<DictionaryEntry>(
        &dir.join("vocab_logs.jsonl"),
    )?)?;
    if span_dict.modality() != Modality::Span || log_dict.modality() != Modality::Log {
        return Err(Error::Data(
            "vocabulary files hold the wrong modality".into(),
        ));
    }
    Ok(Artifacts {
        span_miner,
        log_miner,
        span_dict,
        log_dict,
    })
}

/// `mine`: template dumps, miner states and dictionaries for both modalities.
pub fn cmd_mine(logs: &Path, traces: &Path, cfg: &RunConfig, out: &Path) -> Result<Artifacts> {
    let (traces_v, logs_v) = read_inputs(logs, traces, cfg)?;
    let (art, split) = mine(&traces_v, &logs_v, cfg)?;
    let outputs = save_artifacts(&art, out)?;
    let stats = serde_json::json!({
        "span_templates": art.span_miner.len(),
        "log_templates": art.log_miner.len(),
        "span_words": art.span_dict.len(),
        "log_words": art.log_dict.len(),
        "split_time": split.split_time,
        "train_traces": split.train_traces.len(),
        "train_logs": split.train_logs.len(),
    });
    write_manifest(out, "mine", cfg, &[logs, traces], &outputs, stats)?;
    log::info!(
        "mined {} span templates and {} log templates",
        art.span_miner.len(),
        art.log_miner.len()
    );
    Ok(art)
}

pub const TRAIN_WINDOWS_FILE: &str = "train_windows.jsonl";
pub const TRAIN_SPAN_SEQS_FILE: &str = "train_span_seqs.jsonl";
pub const TRAIN_LOG_SEQS_FILE: &str = "train_log_seqs.jsonl";
pub const TEST_TRACES_FILE: &str = "test_traces.jsonl";
pub const TEST_LOGS_FILE: &str = "test_logs.jsonl";

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let paths: Vec<PathBuf> = [
        TRAIN_WINDOWS_FILE,
        TRAIN_SPAN_SEQS_FILE,
        TRAIN_LOG_SEQS_FILE,
        TEST_TRACES_FILE,
        TEST_LOGS_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();
    write_jsonl(&paths[0], &ds.train_windows)?;
    write_jsonl(&paths[1], &ds.train_span_seqs)?;
    write_jsonl(&paths[2], &ds.train_log_seqs)?;
    write_jsonl(&paths[3], &ds.test_traces)?;
    write_jsonl(&paths[4], &ds.test_logs)?;
    write_json(&dir.join("dataset_stats.json"), &ds.stats)?;
    Ok(paths)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train_windows: read_jsonl(&dir.join(TRAIN_WINDOWS_FILE))?,
        train_span_seqs: read_jsonl(&dir.join(TRAIN_SPAN_SEQS_FILE))?,
        train_log_seqs: read_jsonl(&dir.join(TRAIN_LOG_SEQS_FILE))?,
        test_traces: read_jsonl(&dir.join(TEST_TRACES_FILE))?,
        test_logs: read_jsonl(&dir.join(TEST_LOGS_FILE))?,
        stats: read_json(&dir.join("dataset_stats.json"))?,
    })
}

/// `build-dataset`: reruns the split and writes train examples and the
/// templated test side.
pub fn cmd_build_dataset(
    logs: &Path,
    traces: &Path,
    artifacts: &Path,
    cfg: &RunConfig,
    out: &Path,
) -> Result<Dataset> {
    let (traces_v, logs_v) = read_inputs(logs, traces, cfg)?;
    let art = load_artifacts(artifacts)?;
    let split = temporal_split(&traces_v, &logs_v, cfg.dataset.split())?;
    let ds = build_dataset(&art, &split, cfg)?;
    let outputs = save_dataset(&ds, out)?;
    let span_state = artifacts.join(SPAN_MINER_FILE);
    let log_state = artifacts.join(LOG_MINER_FILE);
    write_manifest(
        out,
        "build",
        cfg,
        &[logs, traces, &span_state, &log_state],
        &outputs,
        serde_json::to_value(ds.stats)?,
    )?;
    log::info!(
        "{} train windows ({} dropped), {} test traces",
        ds.stats.train_windows,
        ds.stats.dropped_windows,
        ds.stats.test_traces
    );
    Ok(ds)
}

fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Log => "log",
        ModelKind::Trace => "trace",
        ModelKind::Joint => "joint",
    }
}

pub fn checkpoint_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("checkpoint_{}.json", kind_name(kind)))
}

fn write_loss_csv(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["epoch", "loss_span", "loss_log", "loss_total"])
        .map_err(err)?;
    for e in curve {
        w.write_record([
            e.epoch.to_string(),
            e.mean_loss_span.to_string(),
            e.mean_loss_log.to_string(),
            e.mean_loss_total.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `train`: checkpoint plus a per-epoch loss CSV.
pub fn cmd_train(
    dataset: &Path,
    artifacts: &Path,
    kind: ModelKind,
    cfg: &RunConfig,
    out: &Path,
) -> Result<Checkpoint> {
    let art = load_artifacts(artifacts)?;
    let ds = load_dataset(dataset)?;
    ensure_dir(out)?;
    let (ck, curve) = train_model(kind, &art, &ds, cfg)?;
    let ck_path = checkpoint_path(out, kind);
    ck.save(&ck_path)?;
    let loss_path = out.join(format!("loss_{}.csv", kind_name(kind)));
    write_loss_csv(&loss_path, &curve)?;
    let input = dataset.join(match kind {
        ModelKind::Joint => TRAIN_WINDOWS_FILE,
        ModelKind::Trace => TRAIN_SPAN_SEQS_FILE,
        ModelKind::Log => TRAIN_LOG_SEQS_FILE,
    });
    let last = curve.last().map_or(f64::NAN, |e| e.mean_loss_total);
    write_manifest(
        out,
        &format!("train_{}", kind_name(kind)),
        cfg,
        &[&input],
        &[ck_path, loss_path],
        serde_json::json!({ "epochs": curve.len(), "final_loss": last }),
    )?;
    log::info!(
        "trained {} model for {} epochs, final loss {last:.6}",
        kind_name(kind),
        curve.len()
    );
    Ok(ck)
}

/// `detect`: per-trace verdicts and a metric report.
pub fn cmd_detect(
    checkpoint: &Path,
    dataset: &Path,
    cfg: &RunConfig,
    out: &Path,
) -> Result<DetectionReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let traces: Vec<TemplatedTrace> = read_jsonl(&dataset.join(TEST_TRACES_FILE))?;
    let logs: Vec<TemplatedLog> = read_jsonl(&dataset.join(TEST_LOGS_FILE))?;
    let det = detect(&ck, &traces, &logs, cfg)?;
    ensure_dir(out)?;
    let name = kind_name(ck.kind);
    let verdicts = out.join(format!("verdicts_{name}.jsonl"));
    write_jsonl(&verdicts, &det.verdicts)?;
    let report = out.join(format!("report_{name}.json"));
    std::fs::write(&report, serde_json::to_string_pretty(&det.report)? + "\n")
        .map_err(|e| Error::io(&report, e))?;
    write_manifest(
        out,
        &format!("detect_{name}"),
        cfg,
        &[
            checkpoint,
            &dataset.join(TEST_TRACES_FILE),
            &dataset.join(TEST_LOGS_FILE),
        ],
        &[verdicts, report],
        serde_json::Value::Null,
    )?;
    log::info!("{}", det.report);
    Ok(det.report)
}

/// Fails with [`Error::Gate`] when the trace-level F1 is below `min`.
pub fn f1_gate(report: &DetectionReport, min: f64) -> Result<()> {
    if report.trace.f1 < min {
        return Err(Error::Gate {
            metric: "trace f1".into(),
            value: report.trace.f1,
            min,
        });
    }
    Ok(())
}

/// `eval`: verdicts against a truth file, with recall per anomaly kind.
pub fn cmd_eval(verdicts: &Path, truth: &Path, cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let v: Vec<AnomalyVerdict> = read_jsonl(verdicts)?;
    let t: Vec<TruthRecord> = read_jsonl(truth)?;
    let report = eval(&v, &t)?;
    ensure_dir(out)?;
    let path = out.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .map_err(|e| Error::io(&path, e))?;
    write_manifest(
        out,
        "eval",
        cfg,
        &[verdicts, truth],
        &[path],
        serde_json::Value::Null,
    )?;
    Ok(report)
}

/// `embed`: per-template vectors and their 2D projection as CSV.
pub fn cmd_embed(
    checkpoint: &Path,
    artifacts: &Path,
    modality: Modality,
    cfg: &RunConfig,
    out: &Path,
) -> Result<(EmbeddingTable, Projection)> {
    let ck = Checkpoint::load(checkpoint)?;
    let art = load_artifacts(artifacts)?;
    let (table, projection) = embeddings(&ck, &art, modality)?;
    ensure_dir(out)?;
    let name = modality_name(modality);
    let emb_path = out.join(format!("embeddings_{name}.csv"));
    let file = std::fs::File::create(&emb_path).map_err(|e| Error::io(&emb_path, e))?;
    embed::write_embedding_csv(&table, file)?;
    let proj_path = out.join(format!("projection_{name}.csv"));
    let file = std::fs::File::create(&proj_path).map_err(|e| Error::io(&proj_path, e))?;
    embed::write_projection_csv(&projection, art.templates(modality), file)?;
    write_manifest(
        out,
        &format!("embed_{name}"),
        cfg,
        &[checkpoint],
        &[emb_path, proj_path],
        serde_json::json!({ "templates": table.vectors.len(), "warning": projection.warning }),
    )?;
    log::info!("wrote {} {modality} template vectors", table.vectors.len());
    Ok((table, projection))
}

/// `synth`: a labeled corpus from the default workload grammars.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Corpus> {
    let corpus = synth::generate(
        &synth::default_grammars(),
        cfg.synth.n_traces,
        &cfg.synth.anomaly,
        cfg.seed,
    )?;
    corpus.write(out)?;
    let outputs: Vec<PathBuf> = ["logs.jsonl", "traces.jsonl", "truth.jsonl"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    let anomalous = corpus.truth.iter().filter(|t| t.label.is_anomaly()).count();
    write_manifest(
        out,
        "synth",
        cfg,
        &[],
        &outputs,
        serde_json::json!({ "traces": corpus.traces.len(), "logs": corpus.logs.len(), "anomalous": anomalous }),
    )?;
    log::info!(
        "generated {} traces ({anomalous} anomalous) and {} log lines",
        corpus.traces.len(),
        corpus.logs.len()
    );
    Ok(corpus)
}
