//! Training and scoring examples: span windows paired with the logs emitted
//! during the window, plus the temporal train/test split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Label, Micros, RawLogLine, RawTrace};
use crate::template_miner::TemplateId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatedSpan {
    pub start: Micros,
    pub end: Micros,
    pub template: TemplateId,
}

/// An augmented trace with every span replaced by its template id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatedTrace {
    pub trace_id: String,
    pub label: Label,
    pub spans: Vec<TemplatedSpan>,
}

impl TemplatedTrace {
    pub fn templates(&self) -> Vec<TemplateId> {
        self.spans.iter().map(|s| s.template).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatedLog {
    pub timestamp: Micros,
    pub template: TemplateId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedWindow {
    pub trace_id: String,
    pub span_inputs: Vec<TemplateId>,
    /// Time-ordered, right-padded with [`TemplateId::NOLOG`].
    pub log_block: Vec<TemplateId>,
    pub span_target: TemplateId,
    pub log_target: TemplateId,
    pub window_start: Micros,
    pub window_end: Micros,
}

impl AlignedWindow {
    /// Block members without padding.
    pub fn block_logs(&self) -> impl Iterator<Item = TemplateId> + '_ {
        self.log_block
            .iter()
            .copied()
            .filter(|&t| t != TemplateId::NOLOG)
    }
}

/// A window before the missing-target filter; used when scoring test traces,
/// where every span position must be scored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowDraft {
    pub position: usize,
    pub span_inputs: Vec<TemplateId>,
    pub span_target: TemplateId,
    /// Indices into the log stream, oldest first.
    pub block: Vec<usize>,
    /// Index of the first log strictly after `window_end`.
    pub log_target: Option<usize>,
    pub window_start: Micros,
    pub window_end: Micros,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WindowSet {
    pub windows: Vec<AlignedWindow>,
    pub dropped: usize,
}

/// Windows at every position `i` with `i + window_size < len`.
///
/// `logs` must be sorted by timestamp. The block holds the logs inside
/// `[start(span_i), end(span_{i+window_size-1})]`, keeping the most recent
/// `max_block_logs`.
pub fn window_drafts(
    trace: &TemplatedTrace,
    logs: &[TemplatedLog],
    window_size: usize,
    max_block_logs: usize,
) -> Vec<WindowDraft> {
    debug_assert!(logs.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    if window_size == 0 || trace.spans.len() <= window_size {
        return Vec::new();
    }
    (0..trace.spans.len() - window_size)
        .map(|i| {
            let inputs = &trace.spans[i..i + window_size];
            let window_start = inputs[0].start;
            let window_end = inputs[window_size - 1].end;
            let lo = logs.partition_point(|l| l.timestamp < window_start);
            let hi = logs.partition_point(|l| l.timestamp <= window_end);
            let lo = lo.max(hi.saturating_sub(max_block_logs));
            WindowDraft {
                position: i,
                span_inputs: inputs.iter().map(|s| s.template).collect(),
                span_target: trace.spans[i + window_size].template,
                block: (lo..hi.max(lo)).collect(),
                log_target: (hi < logs.len()).then_some(hi),
                window_start,
                window_end,
            }
        })
        .collect()
}

/// Joint-model examples for one trace; windows without a next log are dropped.
pub fn make_windows(
    trace: &TemplatedTrace,
    logs: &[TemplatedLog],
    window_size: usize,
    max_block_logs: usize,
) -> WindowSet {
    let mut set = WindowSet::default();
    for d in window_drafts(trace, logs, window_size, max_block_logs) {
        let Some(target) = d.log_target else {
            set.dropped += 1;
            continue;
        };
        let mut log_block: Vec<TemplateId> = d.block.iter().map(|&j| logs[j].template).collect();
        log_block.resize(max_block_logs, TemplateId::NOLOG);
        set.windows.push(AlignedWindow {
            trace_id: trace.trace_id.clone(),
            span_inputs: d.span_inputs,
            log_block,
            span_target: d.span_target,
            log_target: logs[target].template,
            window_start: d.window_start,
            window_end: d.window_end,
        });
    }
    set
}

/// Sliding `(history → next)` pairs over a template stream.
pub fn make_single_log_sequences(
    ids: &[TemplateId],
    history: usize,
) -> Vec<(Vec<TemplateId>, TemplateId)> {
    if history == 0 || ids.len() <= history {
        return Vec::new();
    }
    ids.windows(history + 1)
        .map(|w| (w[..history].to_vec(), w[history]))
        .collect()
}

/// Span-only windows of a trace, for the single-modality trace model.
pub fn span_sequences(
    trace: &TemplatedTrace,
    window_size: usize,
) -> Vec<(Vec<TemplateId>, TemplateId)> {
    make_single_log_sequences(&trace.templates(), window_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
        }
    }
}

pub const MIN_NORMAL_TRACES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub split_time: Micros,
    pub train_traces: Vec<RawTrace>,
    pub train_logs: Vec<RawLogLine>,
    pub test_traces: Vec<RawTrace>,
    pub test_logs: Vec<RawLogLine>,
    pub discarded_anomalous: usize,
}

/// Splits at the earliest time before which `train_fraction` of the normal
/// traces have started.
///
/// Train keeps the normal traces starting before the split and the logs
/// inside their intervals; anomalous traces before the split are discarded.
/// Test holds every trace starting at or after the split and every log from
/// the split onward.
pub fn temporal_split(traces: &[RawTrace], logs: &[RawLogLine], spec: SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    let mut traces = traces.to_vec();
    traces.sort_by(|a, b| {
        a.start_time()
            .cmp(&b.start_time())
            .then_with(|| a.trace_id.cmp(&b.trace_id))
    });
    let normal_starts: Vec<Micros> = traces
        .iter()
        .filter(|t| t.label == Label::Normal)
        .map(RawTrace::start_time)
        .collect();
    if normal_starts.len() < MIN_NORMAL_TRACES {
        return Err(Error::Data(format!(
            "{} normal traces; at least {MIN_NORMAL_TRACES} needed to split",
            normal_starts.len()
        )));
    }
    let wanted = (spec.train_fraction * normal_starts.len() as f64 - 1e-9).ceil() as usize;
    let wanted = wanted.clamp(1, normal_starts.len());
    let split_time = normal_starts[wanted - 1] + 1;

    let mut train_traces = Vec::new();
    let mut test_traces = Vec::new();
    let mut discarded_anomalous = 0;
    for t in traces {
        if t.start_time() >= split_time {
            test_traces.push(t);
        } else if t.label == Label::Normal {
            train_traces.push(t);
        } else {
            discarded_anomalous += 1;
        }
    }

    let mut intervals: Vec<(Micros, Micros)> = train_traces
        .iter()
        .map(|t| (t.start_time(), t.end_time()))
        .collect();
    intervals.sort_unstable();
    let mut merged: Vec<(Micros, Micros)> = Vec::new();
    for (s, e) in intervals {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    let inside = |ts: Micros| {
        let k = merged.partition_point(|&(s, _)| s <= ts);
        k > 0 && ts <= merged[k - 1].1
    };

    let mut logs = logs.to_vec();
    logs.sort_by_key(|l| l.timestamp);
    let train_logs = logs
        .iter()
        .filter(|l| inside(l.timestamp))
        .cloned()
        .collect();
    let test_logs = logs
        .into_iter()
        .filter(|l| l.timestamp >= split_time)
        .collect();

    Ok(Split {
        split_time,
        train_traces,
        train_logs,
        test_traces,
        test_logs,
        discarded_anomalous,
    })
}
