//! Runs every stage through its on-disk form, the same way the CLI does:
//! synth, mine, build-dataset, train, detect, eval and embed, each writing
//! its outputs and a manifest into one directory.
//!
//! ```text
//! cargo run --example file_pipeline -- [out_dir]
//! ```

use std::path::PathBuf;

use ntp_anomaly::config::RunConfig;
use ntp_anomaly::models::ModelKind;
use ntp_anomaly::pipeline::{self, checkpoint_path};
use ntp_anomaly::Modality;

fn main() -> ntp_anomaly::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "out/pipeline".into()),
    );
    let cfg = RunConfig::from_toml_str(include_str!("../configs/smoke.toml"))?;

    pipeline::cmd_synth(&cfg, &out)?;
    let (logs, traces) = (out.join("logs.jsonl"), out.join("traces.jsonl"));
    pipeline::cmd_mine(&logs, &traces, &cfg, &out)?;
    pipeline::cmd_build_dataset(&logs, &traces, &out, &cfg, &out)?;
    pipeline::cmd_train(&out, &out, ModelKind::Joint, &cfg, &out)?;
    let checkpoint = checkpoint_path(&out, ModelKind::Joint);
    print!("{}", pipeline::cmd_detect(&checkpoint, &out, &cfg, &out)?);
    let eval = pipeline::cmd_eval(
        &out.join("verdicts_joint.jsonl"),
        &out.join("truth.jsonl"),
        &cfg,
        &out,
    )?;
    for k in &eval.by_kind {
        println!("  {:?}: {}/{}", k.kind, k.detected, k.total);
    }
    pipeline::cmd_embed(&checkpoint, &out, Modality::Span, &cfg, &out)?;

    let mut files: Vec<_> = std::fs::read_dir(&out)
        .map_err(|e| ntp_anomaly::Error::io(&out, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    files.sort();
    println!("\n{}:", out.display());
    for f in files {
        println!("  {f}");
    }
    Ok(())
}
