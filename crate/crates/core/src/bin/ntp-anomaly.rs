use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ntp_anomaly::config::RunConfig;
use ntp_anomaly::models::ModelKind;
use ntp_anomaly::{pipeline, Error, Modality, Result};

#[derive(Parser)]
#[command(
    name = "ntp-anomaly",
    version,
    about = "Next-template-prediction anomaly detection over logs and traces"
)]
struct Cli {
    /// TOML file overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine span and log templates from the training side of the split.
    Mine {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        traces: PathBuf,
    },
    /// Build training windows and the templated test set.
    BuildDataset {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        /// Directory written by `mine`; defaults to --out.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Train a log, trace or joint model.
    Train {
        #[arg(long, default_value = "joint")]
        model: String,
        /// Directory written by `build-dataset`; defaults to --out.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score the test traces and sweep the decision threshold.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Exit with status 3 when trace F1 falls below this value.
        #[arg(long)]
        min_f1: Option<f64>,
    },
    /// Compare verdicts with a truth file.
    Eval {
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Export template vectors and a 2D projection.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long, default_value = "span")]
        modality: String,
    },
    /// Generate a labeled synthetic corpus.
    Synth {
        #[arg(long)]
        n_traces: Option<usize>,
        #[arg(long)]
        anomaly_rate: Option<f64>,
    },
}

fn parse_modality(s: &str) -> Result<Modality> {
    match s {
        "span" | "spans" | "trace" => Ok(Modality::Span),
        "log" | "logs" => Ok(Modality::Log),
        other => Err(Error::Config(format!("unknown modality {other:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            e => e,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    } else {
        cfg.train.seed = cfg.seed;
    }
    let out = cli.out.as_path();
    let or_out = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| out.to_path_buf());
    match &cli.command {
        Command::Mine { logs, traces } => {
            let art = pipeline::cmd_mine(logs, traces, &cfg, out)?;
            println!(
                "mined {} span templates and {} log templates",
                art.span_miner.len(),
                art.log_miner.len()
            );
        }
        Command::BuildDataset {
            logs,
            traces,
            artifacts,
        } => {
            let ds = pipeline::cmd_build_dataset(logs, traces, &or_out(artifacts), &cfg, out)?;
            let st = ds.stats;
            println!(
                "{} train windows ({} dropped), {} test traces ({} anomalous)",
                st.train_windows, st.dropped_windows, st.test_traces, st.test_anomalous
            );
        }
        Command::Train {
            model,
            dataset,
            artifacts,
            epochs,
        } => {
            let kind: ModelKind = model.parse()?;
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            cfg.validate()?;
            let ck = pipeline::cmd_train(&or_out(dataset), &or_out(artifacts), kind, &cfg, out)?;
            println!("trained {model} model for {} epochs", ck.epochs_completed);
        }
        Command::Detect {
            checkpoint,
            dataset,
            min_f1,
        } => {
            let report = pipeline::cmd_detect(checkpoint, &or_out(dataset), &cfg, out)?;
            print!("{report}");
            if let Some(min) = min_f1 {
                pipeline::f1_gate(&report, *min)?;
            }
        }
        Command::Eval { verdicts, truth } => {
            let report = pipeline::cmd_eval(verdicts, truth, &cfg, out)?;
            println!("{}", report.metrics);
            for k in &report.by_kind {
                println!("  {:?}: {}/{} detected", k.kind, k.detected, k.total);
            }
            if report.unmatched > 0 {
                println!("{} verdicts without truth", report.unmatched);
            }
        }
        Command::Embed {
            checkpoint,
            artifacts,
            modality,
        } => {
            let m = parse_modality(modality)?;
            let (table, projection) =
                pipeline::cmd_embed(checkpoint, &or_out(artifacts), m, &cfg, out)?;
            println!("wrote {} {m} template vectors", table.vectors.len());
            if let Some(w) = projection.warning {
                println!("warning: {w}");
            }
        }
        Command::Synth {
            n_traces,
            anomaly_rate,
        } => {
            if let Some(n) = n_traces {
                cfg.synth.n_traces = *n;
            }
            if let Some(r) = anomaly_rate {
                cfg.synth.anomaly.rate = *r;
            }
            let corpus = pipeline::cmd_synth(&cfg, out)?;
            let anomalous = corpus.truth.iter().filter(|t| t.label.is_anomaly()).count();
            println!(
                "generated {} traces ({anomalous} anomalous) and {} log lines",
                corpus.traces.len(),
                corpus.logs.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
