//! Trains the single-modality models: the trace model on span windows and
//! the logs-only model on the log stream, and prints their loss curves.
//!
//! ```text
//! cargo run --release --example train_single -- [epochs]
//! ```

use ntp_anomaly::config::RunConfig;
use ntp_anomaly::models::ModelKind;
use ntp_anomaly::pipeline::{build_dataset, mine, train_model};
use ntp_anomaly::synth::{default_grammars, generate};

fn main() -> ntp_anomaly::Result<()> {
    let mut cfg = RunConfig::from_toml_str(include_str!("../configs/desk.toml"))?;
    cfg.train.epochs = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(10);
    let corpus = generate(&default_grammars(), 600, &cfg.synth.anomaly, cfg.seed)?;
    let (art, split) = mine(&corpus.traces, &corpus.logs, &cfg)?;
    let ds = build_dataset(&art, &split, &cfg)?;

    for kind in [ModelKind::Trace, ModelKind::Log] {
        let (ck, curve) = train_model(kind, &art, &ds, &cfg)?;
        println!("{kind:?} model, {} epochs", ck.epochs_completed);
        for e in &curve {
            println!("  epoch {:>3}  loss {:.4}", e.epoch, e.mean_loss_total);
        }
    }
    Ok(())
}
