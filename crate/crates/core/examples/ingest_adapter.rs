//! Reads logs and spans exported with foreign column names by mapping them
//! onto the canonical fields through an adapter file.
//!
//! ```text
//! cargo run --example ingest_adapter
//! ```

use ntp_anomaly::ingest::{read_logs_with, read_traces_with, Adapter, Format};

const ADAPTER: &str = r#"
time_unit = "ms"

[log]
ts = "time_ms"
msg = "body"
src = "host"

[trace]
trace_id = "ctx.trace"
span_id = "ctx.span"
start = "recv_ms"
end = "done_ms"
name = "op"
http_method = "attrs.method"
http_path = "attrs.path"
"#;

const LOGS: &str = "\
time_ms,level,body,host
1000,INFO,nova.api accepted request for server 7f3a,node-a
1004,INFO,nova.compute spawned instance 7f3a,node-b
1009,WARN,nova.compute retrying port binding,node-b
oops,INFO,unparseable timestamp row,node-a
";

const SPANS: &str = r#"{"ctx":{"trace":"t1","span":"a"},"recv_ms":999,"done_ms":1003,"op":"auth","attrs":{}}
{"ctx":{"trace":"t1","span":"b"},"recv_ms":1003,"done_ms":1012,"op":"create","attrs":{"method":"POST","path":"/v2.1/servers"}}
{"ctx":{"trace":"t2","span":"c"},"recv_ms":990,"done_ms":995,"op":"auth","attrs":{}}
"#;

fn main() -> ntp_anomaly::Result<()> {
    let dir = std::env::temp_dir().join("ntp_anomaly_ingest_adapter");
    std::fs::create_dir_all(&dir).map_err(|e| ntp_anomaly::Error::io(&dir, e))?;
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| ntp_anomaly::Error::io(&p, e))?;
        Ok::<_, ntp_anomaly::Error>(p)
    };
    let adapter = Adapter::from_file(&write("adapter.toml", ADAPTER)?)?;

    let (logs, stats) = read_logs_with(&write("logs.csv", LOGS)?, Format::Csv, &adapter)?;
    println!("logs: {} rows, {} malformed", stats.rows, stats.malformed);
    for l in &logs {
        println!("  {:>8}us {:<7} {}", l.timestamp, l.source_id, l.message);
    }

    let (traces, stats) = read_traces_with(&write("spans.jsonl", SPANS)?, Format::Jsonl, &adapter)?;
    println!("spans: {} rows, {} malformed", stats.rows, stats.malformed);
    for t in &traces {
        println!(
            "  trace {} ({} spans, starts {}us)",
            t.trace_id,
            t.spans.len(),
            t.start_time()
        );
        for s in &t.spans {
            let http = match (&s.http_method, &s.http_path) {
                (Some(m), Some(p)) => format!(" {m} {p}"),
                _ => String::new(),
            };
            println!("    {:<7} {}..{}{http}", s.name, s.start_time, s.end_time);
        }
    }
    Ok(())
}
