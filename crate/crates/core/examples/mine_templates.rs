//! Mines span and log templates from a synthetic corpus and shows how unseen
//! messages are matched against the frozen template set.
//!
//! ```text
//! cargo run --example mine_templates
//! ```

use ntp_anomaly::config::RunConfig;
use ntp_anomaly::pipeline::mine;
use ntp_anomaly::synth::{default_grammars, generate, AnomalySpec};
use ntp_anomaly::Modality;

fn main() -> ntp_anomaly::Result<()> {
    let cfg = RunConfig::default();
    let corpus = generate(&default_grammars(), 300, &AnomalySpec::default(), 3)?;
    let (art, split) = mine(&corpus.traces, &corpus.logs, &cfg)?;
    println!("mined from {} training traces", split.train_traces.len());

    for m in [Modality::Span, Modality::Log] {
        let templates = art.templates(m);
        println!("\n{m} templates: {}", templates.len());
        for t in templates.iter().take(8) {
            println!(
                "  {:>3} x{:<5} {}",
                t.template_id.0,
                t.support_count,
                t.text()
            );
        }
    }

    for msg in [
        "glance.api received create request for image=9c0ffee1",
        "kernel: segfault at 0000 ip 00007f",
    ] {
        let id = art.log_miner.match_only(msg);
        let text = art
            .log_miner
            .template(id)
            .map_or("<unknown>".into(), |t| t.text());
        println!("\n{msg:?}\n  -> {} {text}", id.0);
    }
    Ok(())
}
