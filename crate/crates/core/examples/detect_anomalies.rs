//! Trains the joint model, scores every test trace by its span error rate,
//! sweeps the decision threshold and lists the flagged traces next to the
//! injected anomaly kind.
//!
//! ```text
//! cargo run --release --example detect_anomalies -- [n_traces] [epochs]
//! ```

use std::collections::HashMap;

use ntp_anomaly::config::RunConfig;
use ntp_anomaly::models::ModelKind;
use ntp_anomaly::pipeline::{build_dataset, detect, eval, mine, train_model};
use ntp_anomaly::synth::{default_grammars, generate};

fn main() -> ntp_anomaly::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut cfg = RunConfig::from_toml_str(include_str!("../configs/desk.toml"))?;
    let n = args.first().copied().unwrap_or(800);
    cfg.train.epochs = args.get(1).copied().unwrap_or(15);
    let corpus = generate(&default_grammars(), n, &cfg.synth.anomaly, cfg.seed)?;
    let (art, split) = mine(&corpus.traces, &corpus.logs, &cfg)?;
    let ds = build_dataset(&art, &split, &cfg)?;
    let (ck, _) = train_model(ModelKind::Joint, &art, &ds, &cfg)?;

    let det = detect(&ck, &ds.test_traces, &ds.test_logs, &cfg)?;
    print!("{}", det.report);
    let kinds: HashMap<&str, _> = corpus
        .truth
        .iter()
        .map(|t| (t.trace_id.as_str(), t.kind))
        .collect();
    println!("\nflagged traces:");
    for v in det
        .verdicts
        .iter()
        .filter(|v| v.trace_label_pred.is_anomaly())
    {
        let kind = kinds.get(v.trace_id.as_str()).copied().flatten();
        println!(
            "  {}  rate {:.3}  {:?}",
            v.trace_id, v.span_error_rate, kind
        );
    }
    println!("\nrecall by kind:");
    for k in eval(&det.verdicts, &corpus.truth)?.by_kind {
        println!(
            "  {:<20} {}/{}",
            format!("{:?}", k.kind),
            k.detected,
            k.total
        );
    }
    Ok(())
}
