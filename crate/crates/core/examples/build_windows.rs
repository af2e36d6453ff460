//! Splits a corpus in time, templates both sides and prints the aligned
//! span windows with their log blocks.
//!
//! ```text
//! cargo run --example build_windows
//! ```

use ntp_anomaly::config::RunConfig;
use ntp_anomaly::pipeline::{build_dataset, mine};
use ntp_anomaly::synth::{default_grammars, generate, AnomalySpec};
use ntp_anomaly::{Modality, TemplateId};

fn main() -> ntp_anomaly::Result<()> {
    let cfg = RunConfig::default();
    let corpus = generate(&default_grammars(), 300, &AnomalySpec::default(), 3)?;
    let (art, split) = mine(&corpus.traces, &corpus.logs, &cfg)?;
    let ds = build_dataset(&art, &split, &cfg)?;
    println!("{:#?}", ds.stats);

    let name = |m: Modality, id: TemplateId| {
        let miner = match m {
            Modality::Span => &art.span_miner,
            Modality::Log => &art.log_miner,
        };
        miner.template(id).map_or("<unknown>".into(), |t| t.text())
    };
    let first = &ds.train_windows[0].trace_id;
    for w in ds.train_windows.iter().filter(|w| &w.trace_id == first) {
        println!(
            "\nwindow [{}, {}] of {}",
            w.window_start, w.window_end, w.trace_id
        );
        for &s in &w.span_inputs {
            println!("  span  {}", name(Modality::Span, s));
        }
        println!("  block {} logs", w.block_logs().count());
        println!("  next span -> {}", name(Modality::Span, w.span_target));
        println!("  next log  -> {}", name(Modality::Log, w.log_target));
    }
    Ok(())
}
