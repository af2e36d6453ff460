//! Generates a labeled three-workload corpus and writes it as JSON lines.
//!
//! ```text
//! cargo run --example synth_corpus -- [out_dir] [n_traces]
//! ```

use std::path::PathBuf;

use ntp_anomaly::synth::{default_grammars, generate, oracle_templates, AnomalySpec};

fn main() -> ntp_anomaly::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/synth".into()));
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);

    let grammars = default_grammars();
    for g in &grammars {
        let names: Vec<String> = g
            .span_chain
            .iter()
            .map(|s| match (&s.http_method, &s.http_path) {
                (Some(m), Some(p)) => format!("{m} {p}"),
                _ => s.name.clone(),
            })
            .collect();
        println!("{:<8} {}", g.name, names.join(" -> "));
    }
    let oracle = oracle_templates(&grammars);
    println!(
        "oracle: {} span templates, {} log templates",
        oracle.spans, oracle.logs
    );

    let corpus = generate(&grammars, n, &AnomalySpec::default(), 7)?;
    let anomalous: Vec<_> = corpus.truth.iter().filter(|t| t.kind.is_some()).collect();
    println!(
        "{} traces, {} log lines, {} anomalous",
        corpus.traces.len(),
        corpus.logs.len(),
        anomalous.len()
    );
    for t in anomalous.iter().take(5) {
        println!("  {} {:?}", t.trace_id, t.kind.expect("anomalous"));
    }
    corpus.write(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
