//! Reads span template vectors out of a trained joint model, lists nearest
//! neighbours, compares within- and across-workload cosine distances and
//! writes the 2D projection as CSV.
//!
//! ```text
//! cargo run --release --example span2vec -- [epochs] [projection.csv]
//! ```

use std::fs::File;

use ntp_anomaly::config::RunConfig;
use ntp_anomaly::embed::{group_separation, nearest, write_projection_csv, Metric};
use ntp_anomaly::models::ModelKind;
use ntp_anomaly::pipeline::{
    build_dataset, embeddings, mine, span_templates_by_workload, train_model,
};
use ntp_anomaly::synth::{default_grammars, generate};
use ntp_anomaly::Modality;

fn main() -> ntp_anomaly::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::from_toml_str(include_str!("../configs/desk.toml"))?;
    cfg.train.epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let corpus = generate(&default_grammars(), 600, &cfg.synth.anomaly, cfg.seed)?;
    let (art, split) = mine(&corpus.traces, &corpus.logs, &cfg)?;
    let ds = build_dataset(&art, &split, &cfg)?;
    let (ck, _) = train_model(ModelKind::Joint, &art, &ds, &cfg)?;

    let (table, projection) = embeddings(&ck, &art, Modality::Span)?;
    let text = |id| {
        art.span_miner
            .template(id)
            .map_or("<unknown>".into(), |t| t.text())
    };
    for t in art.templates(Modality::Span).iter().skip(2).take(4) {
        println!("{}", t.text());
        for (id, d) in nearest(&table, t.template_id, 3, Metric::Cosine)? {
            println!("  {d:.3}  {}", text(id));
        }
    }

    let groups = span_templates_by_workload(&art.span_miner, &split.train_traces, &corpus.truth);
    println!("\nworkload  templates  intra   inter");
    for g in group_separation(&table, &groups, Metric::Cosine)? {
        println!(
            "{:<9} {:>9}  {:.3}   {:.3}",
            g.group, g.templates, g.intra, g.inter
        );
    }

    if let Some(w) = projection.warning.as_deref() {
        println!("warning: {w}");
    }
    match args.next() {
        Some(path) => {
            let file = File::create(&path).map_err(|e| ntp_anomaly::Error::io(&path, e))?;
            write_projection_csv(&projection, art.templates(Modality::Span), file)?;
            println!("wrote {path}");
        }
        None => write_projection_csv(
            &projection,
            art.templates(Modality::Span),
            std::io::stdout(),
        )?,
    }
    Ok(())
}
