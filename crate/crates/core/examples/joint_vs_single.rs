//! Scaled-down detection experiment on the synthetic three-workload corpus:
//! trains the joint model and the trace-only model on the same split and
//! compares their trace-level metrics.
//!
//! ```text
//! cargo run --release --example joint_vs_single -- [n_traces] [epochs]
//! ```

use std::time::Instant;

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
    let n_traces = args.first().copied().unwrap_or(cfg.synth.n_traces);
    cfg.train.epochs = args.get(1).copied().unwrap_or(cfg.train.epochs);

    let corpus = generate(&default_grammars(), n_traces, &cfg.synth.anomaly, cfg.seed)?;
    let (art, split) = mine(&corpus.traces, &corpus.logs, &cfg)?;
    let ds = build_dataset(&art, &split, &cfg)?;
    println!("{:?}", ds.stats);

    for kind in [ModelKind::Joint, ModelKind::Trace] {
        let t0 = Instant::now();
        let (ck, curve) = train_model(kind, &art, &ds, &cfg)?;
        let first = curve.first().map_or(0.0, |e| e.mean_loss_total);
        let last = curve.last().map_or(0.0, |e| e.mean_loss_total);
        println!(
            "{kind:?}: loss {first:.4} -> {last:.4} in {:.1}s",
            t0.elapsed().as_secs_f64()
        );
        let det = detect(&ck, &ds.test_traces, &ds.test_logs, &cfg)?;
        print!("{}", det.report);
        let by_kind = eval(&det.verdicts, &corpus.truth)?.by_kind;
        for k in by_kind {
            println!("  {:?}: {}/{}", k.kind, k.detected, k.total);
        }
    }
    Ok(())
}
