//! Trains the joint model on aligned span windows and log blocks and writes
//! the checkpoint; the span and log losses are reported separately.
//!
//! ```text
//! cargo run --release --example train_joint -- [epochs] [checkpoint.json]
//! ```

use ntp_anomaly::config::RunConfig;
use ntp_anomaly::models::ModelKind;
use ntp_anomaly::pipeline::{build_dataset, mine, train_model};
use ntp_anomaly::synth::{default_grammars, generate};

fn main() -> ntp_anomaly::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::from_toml_str(include_str!("../configs/desk.toml"))?;
    cfg.train.epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let corpus = generate(&default_grammars(), 600, &cfg.synth.anomaly, cfg.seed)?;
    let (art, split) = mine(&corpus.traces, &corpus.logs, &cfg)?;
    let ds = build_dataset(&art, &split, &cfg)?;
    println!("{} training windows", ds.train_windows.len());

    let (ck, curve) = train_model(ModelKind::Joint, &art, &ds, &cfg)?;
    println!("epoch   span loss   log loss");
    for e in &curve {
        println!(
            "{:>5}   {:>9.4}   {:>8.4}",
            e.epoch, e.mean_loss_span, e.mean_loss_log
        );
    }
    if let Some(path) = args.next() {
        ck.save(path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
