//! Labeled synthetic telemetry: workload grammars that emit span chains with
//! bound log lines, and injected anomalies with a truth file.
//!
//! Templates are written with `{slot}` placeholders. Slots are filled with
//! values that always contain a digit, while constant tokens never do, so a
//! parameter can never be mistaken for a constant.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_jsonl, Label, Micros, RawLogLine, RawSpan, RawTrace};
use crate::template_miner::{span_descriptor, tokenize, WILDCARD};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEmission {
    pub template: String,
    /// Inclusive bounds on how many lines one span emits.
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanStep {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_path: Option<String>,
    /// The first emission is always logged exactly once, before the others.
    pub logs: Vec<LogEmission>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadGrammar {
    pub name: String,
    pub span_chain: Vec<SpanStep>,
    pub base_duration_us: Micros,
    pub jitter_us: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    SpanDrop,
    SpanSwap,
    ForeignSpanInsert,
    LogBurstForeign,
    LogMissing,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::SpanDrop,
        AnomalyKind::SpanSwap,
        AnomalyKind::ForeignSpanInsert,
        AnomalyKind::LogBurstForeign,
        AnomalyKind::LogMissing,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub rate: f64,
    pub kinds: Vec<AnomalyKind>,
    /// Earliest chain index a mutation may touch. With a span window of
    /// `w`, the first `w` augmented spans are never prediction targets, so
    /// mutations before index `w - 1` can be invisible to the models.
    #[serde(default = "default_min_position")]
    pub min_position: usize,
}

fn default_min_position() -> usize {
    2
}

impl Default for AnomalySpec {
    fn default() -> Self {
        AnomalySpec {
            rate: 0.1,
            kinds: AnomalyKind::ALL.to_vec(),
            min_position: default_min_position(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub trace_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AnomalyKind>,
    /// Grammar that produced the trace.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub workload: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub logs: Vec<RawLogLine>,
    pub traces: Vec<RawTrace>,
    pub truth: Vec<TruthRecord>,
}

impl Corpus {
    /// Writes `logs.jsonl`, `traces.jsonl` and `truth.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("logs.jsonl"), &self.logs)?;
        write_jsonl(
            &dir.join("traces.jsonl"),
            self.traces.iter().flat_map(|t| t.spans.iter()),
        )?;
        write_jsonl(&dir.join("truth.jsonl"), &self.truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateCounts {
    /// Includes the two sentinel spans.
    pub spans: usize,
    pub logs: usize,
}

impl WorkloadGrammar {
    pub fn validate(&self) -> Result<()> {
        if self.span_chain.len() < 2 {
            return Err(Error::Config(format!(
                "workload {} needs at least 2 spans",
                self.name
            )));
        }
        if self.base_duration_us < 200 {
            return Err(Error::Config(format!(
                "workload {} span duration must be at least 200us",
                self.name
            )));
        }
        for step in &self.span_chain {
            for e in &step.logs {
                if e.min > e.max {
                    return Err(Error::Config(format!(
                        "log emission {:?} has min > max",
                        e.template
                    )));
                }
            }
            if step.logs.first().is_some_and(|e| e.min != 1 || e.max != 1) {
                return Err(Error::Config(format!(
                    "first log of span {:?} must be emitted exactly once",
                    step.name
                )));
            }
        }
        Ok(())
    }
}

fn step(name: &str, logs: &[&str]) -> SpanStep {
    SpanStep {
        name: name.to_string(),
        http_method: None,
        http_path: None,
        logs: emissions(logs),
    }
}

fn http(method: &str, path: &str, logs: &[&str]) -> SpanStep {
    SpanStep {
        name: method.to_string(),
        http_method: Some(method.to_string()),
        http_path: Some(path.to_string()),
        logs: emissions(logs),
    }
}

fn emissions(logs: &[&str]) -> Vec<LogEmission> {
    logs.iter()
        .enumerate()
        .map(|(i, t)| LogEmission {
            template: t.to_string(),
            min: if i == 0 { 1 } else { 0 },
            max: if i == 0 { 1 } else { 2 },
        })
        .collect()
}

fn auth_step() -> SpanStep {
    http(
        "POST",
        "/keystone/auth/tokens",
        &[
            "keystone.auth accepted password credentials for user={user}",
            "keystone.token issued scoped token expires_in={n} seconds",
            "keystone.policy evaluated rule identity:get_token result allow",
        ],
    )
}

/// Image, server and network creation workloads sharing one authentication
/// span. Every other span is unique to its workload and mentions the
/// workload's resource word.
pub fn default_grammars() -> Vec<WorkloadGrammar> {
    let image = vec![
        auth_step(),
        http(
            "POST",
            "/glance/images",
            &[
                "glance.api received create request for image={id}",
                "glance.schema validated image properties count={n}",
                "glance.quota checked image quota for project={id} ok",
            ],
        ),
        step(
            "glance-registry:reserve:images",
            &[
                "glance.registry reserved image record id={id} status queued",
                "glance.db inserted image row in table images id={id}",
                "glance.locations cleared location list for image={id}",
            ],
        ),
        http(
            "PUT",
            "/glance/images/{id}/file",
            &[
                "glance.upload started image data upload size={n} bytes",
                "glance.checksum computed image checksum digest={id} done",
                "glance.chunk wrote image chunk offset={n} of upload",
            ],
        ),
        step(
            "glance-store:write:images",
            &[
                "glance.store stored image data backend file path={id}",
                "glance.fsync flushed image store buffers written={n}",
                "glance.verify confirmed stored image size={n} matches",
            ],
        ),
        http(
            "GET",
            "/glance/images/{id}",
            &[
                "glance.show returned image={id} with status active",
                "glance.cache image metadata cache hit ratio={n} percent",
                "glance.notify emitted image.activate event for id={id}",
            ],
        ),
    ];
    let server = vec![
        auth_step(),
        http(
            "POST",
            "/nova/servers",
            &[
                "nova.api accepted create server request id={id}",
                "nova.quota reserved server instances cores={n} for project",
                "nova.flavor resolved server flavor id={id} to resources",
            ],
        ),
        step(
            "nova-scheduler:select_destinations:servers",
            &[
                "nova.scheduler selecting server destination from hosts={n}",
                "nova.filters filtered server hosts remaining count={n}",
                "nova.weigher ranked server host {host} highest weight",
            ],
        ),
        step(
            "nova-compute:build:servers",
            &[
                "nova.compute building server instance on host={host}",
                "nova.virt spawned server guest domain uuid={id} ok",
                "nova.network allocated server ports for instance={id}",
            ],
        ),
        http(
            "POST",
            "/nova/servers/{id}/action",
            &[
                "nova.action applied server action start to instance={id}",
                "nova.power server power state changed to running code={n}",
                "nova.events server lifecycle event delivered seq={n}",
            ],
        ),
        http(
            "GET",
            "/nova/servers/{id}",
            &[
                "nova.show returned server={id} with status active",
                "nova.detail rendered server addresses count={n} in view",
                "nova.audit recorded server view by project={id} done",
            ],
        ),
    ];
    let network = vec![
        auth_step(),
        http(
            "POST",
            "/neutron/networks",
            &[
                "neutron.api received create network request id={id}",
                "neutron.quota checked network quota used={n} for project",
                "neutron.validate accepted network attributes mtu={n}",
            ],
        ),
        step(
            "neutron-server:create:networks",
            &[
                "neutron.plugin created network segment vlan={n} in db",
                "neutron.mech bound network mechanism drivers count={n}",
                "neutron.ipam prepared network address pool id={id}",
            ],
        ),
        http(
            "POST",
            "/neutron/networks/{id}/subnets",
            &[
                "neutron.subnet allocated network subnet cidr={ip} ok",
                "neutron.gateway assigned network gateway address={ip}",
                "neutron.routes computed network host routes count={n}",
            ],
        ),
        step(
            "neutron-dhcp:notify:networks",
            &[
                "neutron.dhcp notified network dhcp agent host={host}",
                "neutron.agent acknowledged network update seq={n} from",
                "neutron.lease wrote network lease file entries={n} done",
            ],
        ),
        http(
            "GET",
            "/neutron/networks/{id}",
            &[
                "neutron.show returned network={id} with status active",
                "neutron.ports listed network ports count={n} in view",
                "neutron.audit recorded network view by project={id} ok",
            ],
        ),
    ];
    [("image", image), ("server", server), ("network", network)]
        .into_iter()
        .map(|(name, span_chain)| WorkloadGrammar {
            name: name.to_string(),
            span_chain,
            base_duration_us: 4000,
            jitter_us: 2000,
        })
        .collect()
}

fn foreign_spans() -> Vec<SpanStep> {
    vec![
        http("DELETE", "/cinder/volumes/{id}", &[]),
        step("cinder-volume:detach:volumes", &[]),
        http("PATCH", "/swift/containers/{id}/objects", &[]),
    ]
}

const FOREIGN_LOGS: &[&str] = &[
    "kernel oom_reaper reaped process pid={n} after kill",
    "libvirtd failed to connect to monitor socket fd={n}",
    "ovs-vswitchd dropped packets on bridge port={n} overflow",
    "rabbitmq connection reset by peer channel={n} closed",
    "haproxy backend server marked down check_duration={n}",
];

fn mask_slots(template: &str) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        out.push_str(&rest[..open]);
        out.push_str(WILDCARD);
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    out
}

fn fill_slots<R: Rng>(template: &str, rng: &mut R) -> String {
    let mut out = String::with_capacity(template.len() + 16);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        out.push_str(&rest[..open]);
        let value = match &rest[open + 1..open + close] {
            "n" => rng.random_range(1..100_000u32).to_string(),
            "host" => format!("compute-{}", rng.random_range(1..500u32)),
            "ip" => format!(
                "10.{}.{}.0",
                rng.random_range(0..256u32),
                rng.random_range(0..256u32)
            ),
            "user" => format!("u{}", rng.random_range(1..10_000u32)),
            // ids: a leading decimal digit followed by hex
            _ => format!(
                "{}{:07x}",
                rng.random_range(0..10u32),
                rng.random_range(0..0x1000_0000u32)
            ),
        };
        out.push_str(&value);
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    out
}

fn masked_descriptor(step: &SpanStep) -> String {
    let span = RawSpan {
        trace_id: String::new(),
        span_id: String::new(),
        start_time: 0,
        end_time: 0,
        name: step.name.clone(),
        http_path: step.http_path.as_deref().map(mask_slots),
        http_scheme: None,
        http_method: step.http_method.clone(),
        label: None,
    };
    tokenize(&span_descriptor(&span)).join(" ")
}

/// Number of distinct span and log templates a miner should recover from
/// normal traffic of `grammars`.
pub fn oracle_templates(grammars: &[WorkloadGrammar]) -> TemplateCounts {
    let mut spans = BTreeSet::new();
    let mut logs = BTreeSet::new();
    for g in grammars {
        for s in &g.span_chain {
            spans.insert(masked_descriptor(s));
            for e in &s.logs {
                logs.insert(tokenize(&mask_slots(&e.template)).join(" "));
            }
        }
    }
    TemplateCounts {
        spans: spans.len() + 2,
        logs: logs.len(),
    }
}

/// Gap between consecutive spans and between consecutive traces.
const SPAN_GAP_US: Micros = 50;
const TRACE_GAP_US: Micros = 500;

enum Mutation {
    None,
    Burst(usize),
    Silence(usize),
}

/// Generates `n_traces` traces round-robin over `grammars`.
///
/// Exactly `round(rate * n_traces)` traces are anomalous, each with one
/// kind drawn uniformly from `anomaly.kinds`. Spans run back to back inside
/// a trace and traces follow each other, so every log line sits inside the
/// span that emitted it.
pub fn generate(
    grammars: &[WorkloadGrammar],
    n_traces: usize,
    anomaly: &AnomalySpec,
    seed: u64,
) -> Result<Corpus> {
    if grammars.is_empty() {
        return Err(Error::Config("no workload grammars".into()));
    }
    for g in grammars {
        g.validate()?;
    }
    if n_traces == 0 {
        return Err(Error::Config("n_traces must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&anomaly.rate) {
        return Err(Error::Config(format!(
            "anomaly rate {} not in [0, 1)",
            anomaly.rate
        )));
    }
    if anomaly.rate > 0.0 && anomaly.kinds.is_empty() {
        return Err(Error::Config(
            "anomaly rate > 0 needs at least one kind".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_anomalous = (anomaly.rate * n_traces as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_traces).collect();
    order.shuffle(&mut rng);
    let mut kinds: Vec<Option<AnomalyKind>> = vec![None; n_traces];
    for &i in &order[..n_anomalous] {
        kinds[i] = anomaly.kinds.choose(&mut rng).copied();
    }

    let foreign = foreign_spans();
    let mut corpus = Corpus {
        logs: Vec::new(),
        traces: Vec::new(),
        truth: Vec::new(),
    };
    let mut clock: Micros = 1_000_000;
    for (t, kind) in kinds.into_iter().enumerate() {
        let g = &grammars[t % grammars.len()];
        let trace_id = format!("t{t:06}");
        let label = if kind.is_some() {
            Label::Anomaly
        } else {
            Label::Normal
        };
        let mut chain: Vec<&SpanStep> = g.span_chain.iter().collect();
        let mut mutation = Mutation::None;
        let len = chain.len();
        // positions in [lo, hi), clamped so every chain keeps a valid range
        let mut pick = |hi: usize| {
            let lo = anomaly.min_position.min(hi - 1);
            rng.random_range(lo..hi)
        };
        match kind {
            None => {}
            Some(AnomalyKind::SpanDrop) => {
                chain.remove(pick(len));
            }
            Some(AnomalyKind::SpanSwap) => {
                let i = pick(len - 1);
                chain.swap(i, i + 1);
            }
            Some(AnomalyKind::ForeignSpanInsert) => {
                let i = pick(len + 1).max(1);
                chain.insert(i, foreign.choose(&mut rng).expect("non-empty"));
            }
            Some(AnomalyKind::LogBurstForeign) => mutation = Mutation::Burst(pick(len)),
            Some(AnomalyKind::LogMissing) => mutation = Mutation::Silence(pick(len)),
        }

        let mut spans = Vec::with_capacity(chain.len());
        for (i, s) in chain.iter().enumerate() {
            let dur = g.base_duration_us + rng.random_range(0..=g.jitter_us);
            let (start, end) = (clock, clock + dur);
            clock = end + SPAN_GAP_US;
            spans.push(RawSpan {
                trace_id: trace_id.clone(),
                span_id: format!("{trace_id}-s{i:02}"),
                start_time: start,
                end_time: end,
                name: fill_slots(&s.name, &mut rng),
                http_path: s.http_path.as_deref().map(|p| fill_slots(p, &mut rng)),
                http_scheme: None,
                http_method: s.http_method.clone(),
                label: Some(label),
            });

            let mut lines: Vec<&str> = Vec::new();
            if let Some((first, rest)) = s.logs.split_first() {
                lines.push(&first.template);
                let mut others = Vec::new();
                for e in rest {
                    for _ in 0..rng.random_range(e.min..=e.max) {
                        others.push(e.template.as_str());
                    }
                }
                others.shuffle(&mut rng);
                lines.extend(others);
            }
            if matches!(mutation, Mutation::Silence(j) if j == i) {
                lines.clear();
            }
            if matches!(mutation, Mutation::Burst(j) if j == i) {
                for k in 0..rng.random_range(3..=5u64) {
                    let tpl = FOREIGN_LOGS.choose(&mut rng).expect("non-empty");
                    corpus.logs.push(log_line(
                        start + 1 + k,
                        fill_slots(tpl, &mut rng),
                        label,
                        &g.name,
                    ));
                }
            }
            // regular lines sit in the last three quarters of the span
            let lo = start + dur / 4;
            let step = (end - lo) / (lines.len() as u64 + 1);
            for (k, tpl) in lines.into_iter().enumerate() {
                let ts = lo + (k as u64 + 1) * step - rng.random_range(0..step / 2);
                corpus
                    .logs
                    .push(log_line(ts, fill_slots(tpl, &mut rng), label, &g.name));
            }
        }
        clock += TRACE_GAP_US;
        corpus.traces.push(RawTrace {
            trace_id: trace_id.clone(),
            spans,
            label,
        });
        corpus.truth.push(TruthRecord {
            trace_id,
            label,
            kind,
            workload: g.name.clone(),
        });
    }
    Ok(corpus)
}

fn log_line(ts: Micros, message: String, label: Label, workload: &str) -> RawLogLine {
    RawLogLine {
        timestamp: ts,
        message,
        label: Some(label),
        source_id: format!("{workload}-node"),
    }
}
