//! Readers for raw log lines and trace spans.
//!
//! The canonical interchange format is JSONL with the field names below; CSV
//! with the same column names is accepted as well. Datasets with a different
//! layout are read through an [`Adapter`], a small TOML file that binds schema
//! fields to external column names and fixes the timestamp unit.
//!
//! ```text
//! log:  {"ts": 100, "msg": "server started", "label": "normal", "src": "api-1"}
//! span: {"trace_id": "t1", "span_id": "s1", "start": 5, "end": 9, "name": "GET",
//!        "http_path": "/v2/images/", "http_scheme": "http", "http_method": "GET",
//!        "label": "anomaly"}
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Microseconds since the epoch.
pub type Micros = u64;

pub const START_SPAN: &str = "<START>";
pub const END_SPAN: &str = "<END>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "0" | "false" => Ok(Label::Normal),
            "anomaly" | "anomalous" | "1" | "true" => Ok(Label::Anomaly),
            other => Err(Error::Validation(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown input format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogLine {
    #[serde(rename = "ts")]
    pub timestamp: Micros,
    #[serde(rename = "msg")]
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(rename = "src", default)]
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSpan {
    pub trace_id: String,
    pub span_id: String,
    #[serde(rename = "start")]
    pub start_time: Micros,
    #[serde(rename = "end")]
    pub end_time: Micros,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_scheme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl RawSpan {
    pub fn sentinel(trace_id: &str, name: &str, at: Micros) -> Self {
        RawSpan {
            trace_id: trace_id.to_string(),
            span_id: name.to_string(),
            start_time: at,
            end_time: at,
            name: name.to_string(),
            http_path: None,
            http_scheme: None,
            http_method: None,
            label: None,
        }
    }
}

/// All spans of one request, sorted by start time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTrace {
    pub trace_id: String,
    pub spans: Vec<RawSpan>,
    pub label: Label,
}

impl RawTrace {
    /// Groups spans that share one trace id. Spans are stably sorted by start time.
    pub fn from_spans(trace_id: String, mut spans: Vec<RawSpan>) -> Result<Self> {
        if trace_id.is_empty() {
            return Err(Error::Validation("empty trace_id".into()));
        }
        if spans.is_empty() {
            return Err(Error::Validation(format!("trace {trace_id} has no spans")));
        }
        for s in &spans {
            if s.end_time < s.start_time {
                return Err(Error::Validation(format!(
                    "span {} of trace {}: end_time {} < start_time {}",
                    s.span_id, trace_id, s.end_time, s.start_time
                )));
            }
            if s.trace_id != trace_id {
                return Err(Error::Validation(format!(
                    "span {} belongs to trace {}, not {}",
                    s.span_id, s.trace_id, trace_id
                )));
            }
        }
        spans.sort_by_key(|s| s.start_time);
        let label = if spans.iter().any(|s| s.label == Some(Label::Anomaly)) {
            Label::Anomaly
        } else {
            Label::Normal
        };
        Ok(RawTrace {
            trace_id,
            spans,
            label,
        })
    }

    pub fn start_time(&self) -> Micros {
        self.spans[0].start_time
    }

    /// Latest end time over all spans.
    pub fn end_time(&self) -> Micros {
        self.spans.iter().map(|s| s.end_time).max().unwrap_or(0)
    }
}

/// Adds the `<START>` and `<END>` sentinel spans. Not idempotent: augment once.
pub fn augment_trace(trace: &RawTrace) -> RawTrace {
    let first = trace.spans.first().map(|s| s.start_time).unwrap_or(0);
    let last = trace.spans.last().map(|s| s.end_time).unwrap_or(0);
    let mut spans = Vec::with_capacity(trace.spans.len() + 2);
    spans.push(RawSpan::sentinel(&trace.trace_id, START_SPAN, first));
    spans.extend(trace.spans.iter().cloned());
    spans.push(RawSpan::sentinel(&trace.trace_id, END_SPAN, last));
    RawTrace {
        trace_id: trace.trace_id.clone(),
        spans,
        label: trace.label,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    S,
    Ms,
    #[default]
    Us,
    Ns,
}

impl TimeUnit {
    fn to_micros(self, v: f64) -> f64 {
        match self {
            TimeUnit::S => v * 1e6,
            TimeUnit::Ms => v * 1e3,
            TimeUnit::Us => v,
            TimeUnit::Ns => v / 1e3,
        }
    }
}

/// Column bindings for a foreign dataset layout.
///
/// Keys of `log` and `trace` are canonical field names (`ts`, `msg`, `start`,
/// ...), values are the column names in the external file. Dotted names reach
/// into nested JSON objects. Unlisted fields keep their canonical name, so the
/// span anchor used for alignment is chosen by binding `start`/`end` to the
/// send or receive timestamp column.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    #[serde(default)]
    pub time_unit: TimeUnit,
    #[serde(default)]
    pub log: BTreeMap<String, String>,
    #[serde(default)]
    pub trace: BTreeMap<String, String>,
}

impl Adapter {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn log_column<'a>(&'a self, field: &'a str) -> &'a str {
        self.log.get(field).map(String::as_str).unwrap_or(field)
    }

    fn trace_column<'a>(&'a self, field: &'a str) -> &'a str {
        self.trace.get(field).map(String::as_str).unwrap_or(field)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadStats {
    pub rows: usize,
    pub malformed: usize,
}

type Row = BTreeMap<String, Value>;

fn read_rows(path: &Path, format: Format) -> Result<Vec<Option<Row>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    match format {
        Format::Jsonl => {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                rows.push(serde_json::from_str::<Row>(&line).ok());
            }
        }
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
            let headers = match reader.headers() {
                Ok(h) => h.clone(),
                Err(_) => return Ok(rows),
            };
            for record in reader.records() {
                let row = record.ok().map(|r| {
                    headers
                        .iter()
                        .zip(r.iter())
                        .filter(|(_, v)| !v.is_empty())
                        .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                        .collect::<Row>()
                });
                if matches!(&row, Some(r) if r.is_empty()) {
                    continue;
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

fn lookup<'a>(row: &'a Row, column: &str) -> Option<&'a Value> {
    if let Some(v) = row.get(column) {
        return Some(v);
    }
    let mut parts = column.split('.');
    let mut cur = row.get(parts.next()?)?;
    for p in parts {
        cur = cur.get(p)?;
    }
    Some(cur)
}

fn text(row: &Row, column: &str) -> Option<String> {
    match lookup(row, column)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn micros(row: &Row, column: &str, unit: TimeUnit) -> Option<Micros> {
    let raw = match lookup(row, column)? {
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                if unit == TimeUnit::Us {
                    return Some(u);
                }
                u as f64
            } else {
                n.as_f64()?
            }
        }
        Value::String(s) => {
            let s = s.trim();
            if unit == TimeUnit::Us {
                if let Ok(u) = s.parse::<u64>() {
                    return Some(u);
                }
            }
            s.parse::<f64>().ok()?
        }
        _ => return None,
    };
    let us = unit.to_micros(raw).round();
    (us.is_finite() && us >= 0.0).then_some(us as Micros)
}

fn optional_label(row: &Row, column: &str) -> std::result::Result<Option<Label>, ()> {
    match text(row, column) {
        None => Ok(None),
        Some(s) if s.trim().is_empty() => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| ()),
    }
}

fn check_malformed(path: &Path, stats: ReadStats) -> Result<()> {
    if stats.malformed > 0 {
        log::warn!(
            "{}: skipped {} malformed rows of {}",
            path.display(),
            stats.malformed,
            stats.rows
        );
    }
    if stats.malformed * 2 > stats.rows {
        return Err(Error::Format {
            path: path.to_path_buf(),
            malformed: stats.malformed,
            total: stats.rows,
        });
    }
    Ok(())
}

fn log_from_row(row: &Row, adapter: &Adapter) -> Option<RawLogLine> {
    let timestamp = micros(row, adapter.log_column("ts"), adapter.time_unit)?;
    let message = text(row, adapter.log_column("msg"))?;
    if message.trim().is_empty() {
        return None;
    }
    let label = optional_label(row, adapter.log_column("label")).ok()?;
    let source_id = text(row, adapter.log_column("src")).unwrap_or_default();
    Some(RawLogLine {
        timestamp,
        message,
        label,
        source_id,
    })
}

pub fn read_logs(path: &Path, format: Format) -> Result<Vec<RawLogLine>> {
    read_logs_with(path, format, &Adapter::default()).map(|(logs, _)| logs)
}

/// Reads log lines in file order. Malformed rows are skipped and counted.
pub fn read_logs_with(
    path: &Path,
    format: Format,
    adapter: &Adapter,
) -> Result<(Vec<RawLogLine>, ReadStats)> {
    let rows = read_rows(path, format)?;
    let mut stats = ReadStats {
        rows: rows.len(),
        malformed: 0,
    };
    let mut logs = Vec::with_capacity(rows.len());
    for row in rows {
        match row.as_ref().and_then(|r| log_from_row(r, adapter)) {
            Some(l) => logs.push(l),
            None => stats.malformed += 1,
        }
    }
    check_malformed(path, stats)?;
    Ok((logs, stats))
}

fn span_from_row(row: &Row, adapter: &Adapter) -> Option<RawSpan> {
    let col = |f| adapter.trace_column(f);
    let trace_id = text(row, col("trace_id"))?;
    if trace_id.is_empty() {
        return None;
    }
    let opt = |f| text(row, col(f)).filter(|s| !s.is_empty());
    Some(RawSpan {
        trace_id,
        span_id: text(row, col("span_id")).unwrap_or_default(),
        start_time: micros(row, col("start"), adapter.time_unit)?,
        end_time: micros(row, col("end"), adapter.time_unit)?,
        name: text(row, col("name")).unwrap_or_default(),
        http_path: opt("http_path"),
        http_scheme: opt("http_scheme"),
        http_method: opt("http_method"),
        label: optional_label(row, col("label")).ok()?,
    })
}

pub fn read_traces(path: &Path, format: Format) -> Result<Vec<RawTrace>> {
    read_traces_with(path, format, &Adapter::default()).map(|(t, _)| t)
}

/// Reads spans and groups them into traces, ordered by trace start time
/// (ties by trace id).
pub fn read_traces_with(
    path: &Path,
    format: Format,
    adapter: &Adapter,
) -> Result<(Vec<RawTrace>, ReadStats)> {
    let rows = read_rows(path, format)?;
    let mut stats = ReadStats {
        rows: rows.len(),
        malformed: 0,
    };
    let mut groups: BTreeMap<String, Vec<RawSpan>> = BTreeMap::new();
    for row in rows {
        match row.as_ref().and_then(|r| span_from_row(r, adapter)) {
            Some(s) => groups.entry(s.trace_id.clone()).or_default().push(s),
            None => stats.malformed += 1,
        }
    }
    check_malformed(path, stats)?;
    let mut traces = groups
        .into_iter()
        .map(|(id, spans)| RawTrace::from_spans(id, spans))
        .collect::<Result<Vec<_>>>()?;
    traces.sort_by(|a, b| {
        a.start_time()
            .cmp(&b.start_time())
            .then_with(|| a.trace_id.cmp(&b.trace_id))
    });
    Ok((traces, stats))
}

/// Writes any serializable records as JSONL.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_logs(path: &Path, logs: &[RawLogLine]) -> Result<()> {
    write_jsonl(path, logs)
}

/// Writes the spans of all traces, one span per line.
pub fn write_traces(path: &Path, traces: &[RawTrace]) -> Result<()> {
    write_jsonl(path, traces.iter().flat_map(|t| t.spans.iter()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file_with(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn span(trace: &str, id: &str, start: u64, end: u64) -> RawSpan {
        RawSpan {
            trace_id: trace.into(),
            span_id: id.into(),
            start_time: start,
            end_time: end,
            name: format!("op.{id}"),
            http_path: None,
            http_scheme: None,
            http_method: None,
            label: None,
        }
    }

    #[test]
    fn reads_single_log_row() {
        let f = file_with(r#"{"ts":100,"msg":"server started","label":"normal"}"#);
        let logs = read_logs(f.path(), Format::Jsonl).unwrap();
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].timestamp, 100);
        assert_eq!(logs[0].message, "server started");
        assert_eq!(logs[0].label, Some(Label::Normal));
    }

    #[test]
    fn empty_file_gives_no_logs() {
        let f = file_with("");
        assert!(read_logs(f.path(), Format::Jsonl).unwrap().is_empty());
    }

    #[test]
    fn row_missing_msg_is_counted_and_skipped() {
        let f = file_with("{\"ts\":1,\"msg\":\"a\"}\n{\"ts\":2}\n{\"ts\":3,\"msg\":\"b\"}\n");
        let (logs, stats) = read_logs_with(f.path(), Format::Jsonl, &Adapter::default()).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(stats.malformed, 1);
        assert_eq!(stats.rows, 3);
    }

    #[test]
    fn mostly_malformed_is_a_format_error() {
        let f = file_with("ts,msg\n1,hello\n");
        // a CSV file read as JSONL
        let err = read_logs(f.path(), Format::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_logs(Path::new("/nonexistent/logs.jsonl"), Format::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn csv_logs_and_adapter_bindings() {
        let f = file_with("time,text,host\n1.5,disk full,n1\n2,disk ok,n2\n");
        let adapter: Adapter = toml::from_str(
            "time_unit = \"ms\"\n[log]\nts = \"time\"\nmsg = \"text\"\nsrc = \"host\"\n",
        )
        .unwrap();
        let (logs, _) = read_logs_with(f.path(), Format::Csv, &adapter).unwrap();
        assert_eq!(logs[0].timestamp, 1500);
        assert_eq!(logs[1].timestamp, 2000);
        assert_eq!(logs[0].source_id, "n1");
    }

    #[test]
    fn nested_json_columns() {
        let f = file_with(r#"{"meta":{"t":7},"body":"x y"}"#);
        let adapter: Adapter = toml::from_str("[log]\nts = \"meta.t\"\nmsg = \"body\"\n").unwrap();
        let (logs, _) = read_logs_with(f.path(), Format::Jsonl, &adapter).unwrap();
        assert_eq!(logs[0].timestamp, 7);
    }

    #[test]
    fn spans_sorted_within_trace() {
        let f = file_with(
            "{\"trace_id\":\"t1\",\"span_id\":\"a\",\"start\":5,\"end\":6,\"name\":\"x\"}\n\
             {\"trace_id\":\"t1\",\"span_id\":\"b\",\"start\":3,\"end\":4,\"name\":\"y\"}\n",
        );
        let traces = read_traces(f.path(), Format::Jsonl).unwrap();
        assert_eq!(traces.len(), 1);
        let starts: Vec<_> = traces[0].spans.iter().map(|s| s.start_time).collect();
        assert_eq!(starts, vec![3, 5]);
    }

    #[test]
    fn spans_grouped_by_trace() {
        let f = file_with(
            "{\"trace_id\":\"t1\",\"span_id\":\"a\",\"start\":5,\"end\":6,\"name\":\"x\"}\n\
             {\"trace_id\":\"t2\",\"span_id\":\"b\",\"start\":3,\"end\":4,\"name\":\"y\"}\n",
        );
        let traces = read_traces(f.path(), Format::Jsonl).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].trace_id, "t2");
    }

    #[test]
    fn any_anomalous_span_labels_trace() {
        let mut spans = vec![
            span("t", "a", 1, 2),
            span("t", "b", 2, 3),
            span("t", "c", 3, 4),
        ];
        spans[1].label = Some(Label::Anomaly);
        let t = RawTrace::from_spans("t".into(), spans).unwrap();
        assert_eq!(t.label, Label::Anomaly);
    }

    #[test]
    fn reversed_span_is_rejected_by_id() {
        let f = file_with(
            "{\"trace_id\":\"t1\",\"span_id\":\"bad\",\"start\":9,\"end\":2,\"name\":\"x\"}\n",
        );
        let err = read_traces(f.path(), Format::Jsonl).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn augment_adds_sentinels() {
        let t = RawTrace::from_spans(
            "t".into(),
            vec![
                span("t", "a", 10, 20),
                span("t", "b", 12, 15),
                span("t", "c", 16, 30),
            ],
        )
        .unwrap();
        let a = augment_trace(&t);
        assert_eq!(a.spans.len(), 5);
        assert_eq!(a.spans[0].name, START_SPAN);
        assert_eq!((a.spans[0].start_time, a.spans[0].end_time), (10, 10));
        assert_eq!(a.spans[4].name, END_SPAN);
        assert_eq!((a.spans[4].start_time, a.spans[4].end_time), (30, 30));
        assert_eq!(&a.spans[1..4], &t.spans[..]);
        // not idempotent
        assert_eq!(augment_trace(&a).spans.len(), 7);
    }

    #[test]
    fn augment_single_span() {
        let t = RawTrace::from_spans("t".into(), vec![span("t", "a", 4, 9)]).unwrap();
        let a = augment_trace(&t);
        let times: Vec<_> = a.spans.iter().map(|s| (s.start_time, s.end_time)).collect();
        assert_eq!(times, vec![(4, 4), (4, 9), (9, 9)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_log() -> impl Strategy<Value = RawLogLine> {
            (
                0u64..1_000_000_000,
                "[a-z][a-z0-9 =/]{0,20}",
                prop::option::of(prop_oneof![Just(Label::Normal), Just(Label::Anomaly)]),
                "[a-z0-9-]{0,6}",
            )
                .prop_map(|(timestamp, message, label, source_id)| RawLogLine {
                    timestamp,
                    message,
                    label,
                    source_id,
                })
        }

        proptest! {
            #[test]
            fn log_round_trip(logs in prop::collection::vec(arb_log(), 0..20)) {
                let f = tempfile::NamedTempFile::new().unwrap();
                write_logs(f.path(), &logs).unwrap();
                let back = read_logs(f.path(), Format::Jsonl).unwrap();
                prop_assert_eq!(back, logs);
            }

            #[test]
            fn augment_adds_exactly_two(starts in prop::collection::vec(0u64..1000, 1..12)) {
                let spans = starts.iter().enumerate()
                    .map(|(i, &s)| span("t", &i.to_string(), s, s + 5))
                    .collect();
                let t = RawTrace::from_spans("t".into(), spans).unwrap();
                prop_assert!(t.spans.windows(2).all(|w| w[0].start_time <= w[1].start_time));
                let a = augment_trace(&t);
                prop_assert_eq!(a.spans.len(), t.spans.len() + 2);
                prop_assert_eq!(&a.spans[1..a.spans.len() - 1], &t.spans[..]);
            }
        }
    }
}
