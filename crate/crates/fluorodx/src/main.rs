use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluorodx::config::PipelineConfig;
use fluorodx::pipeline::{self, Workspace};
use fluorodx::service::{self, ServiceConfig};
use fluorodx::synth::{self, SynthSpec};
use fluorodx::{Error, Result};
use fluorodx_core::{Label, Split};
use tracing_subscriber::EnvFilter;

/// Fluorescence microscopy classification pipeline.
#[derive(Parser)]
#[command(name = "fluorodx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the split full-field manifest and the cropped SDP variant.
    Prepare(Common),
    /// Expand training splits with each configured augmentation strategy.
    Augment(Common),
    /// Cross-validate the configured grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Keep finished configurations from an earlier run.
        #[arg(long)]
        resume: bool,
    },
    /// Select the best configuration, retrain it and evaluate on the test split.
    TrainFinal(Common),
    /// Write a Grad-CAM overlay for one image and print its path.
    Explain {
        #[command(flatten)]
        common: Common,
        image: PathBuf,
        /// Overlay path; defaults to `<workspace>/explain/<stem>.png`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the deployed checkpoint over HTTP.
    Serve(Common),
    /// Generate a synthetic fluorescence corpus.
    Synth {
        /// Output directory for `raw/` and `annotations/`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 123)]
        positives: usize,
        #[arg(long, default_value_t = 32)]
        negatives: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = fluorodx_core::manifest::DEFAULT_SEED)]
        seed: u64,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split_counts(m: &fluorodx_core::DatasetManifest) -> String {
    [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|s| format!("{s}={}", m.split_subset(*s).len()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(c) => {
            let out = pipeline::prepare(&load_config(&c)?)?;
            println!(
                "FFI {} records ({}); SDP {} records ({})",
                out.ffi.len(),
                split_counts(&out.ffi),
                out.sdp.len(),
                split_counts(&out.sdp)
            );
        }
        Command::Augment(c) => {
            for (variant, strategy, m) in pipeline::augment(&load_config(&c)?)? {
                let counts = m.class_distribution(None);
                println!(
                    "{variant} {}: {} training records ({} positive, {} negative)",
                    strategy.as_str(),
                    m.len(),
                    counts.get(Label::Positive),
                    counts.get(Label::Negative)
                );
            }
        }
        Command::Sweep { common, resume } => {
            let results = pipeline::sweep(&load_config(&common)?, resume)?;
            print!("{}", fluorodx::evaluate::summary_table(&results));
        }
        Command::TrainFinal(c) => {
            let out = pipeline::train_final(&load_config(&c)?)?;
            let t = &out.report.test;
            println!(
                "{} model_id={} test accuracy={:.4} f1={:.4} auc={}",
                out.report.experiment.name(),
                out.report.model_id,
                t.accuracy,
                t.f1,
                t.auc.map_or("n/a".into(), |a| format!("{a:.4}"))
            );
        }
        Command::Explain { common, image, output } => {
            let (path, e) = pipeline::explain_image(&load_config(&common)?, &image, output.as_deref())?;
            tracing::info!(predicted = %e.predicted(), positive = e.probabilities[1], "explained");
            println!("{}", path.display());
        }
        Command::Serve(c) => {
            let cfg = load_config(&c)?;
            let service = ServiceConfig::from_env(Some(Workspace::new(&cfg.paths.workspace).checkpoint()))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
                path: Path::new("tokio runtime").into(),
                source: e,
            })?;
            rt.block_on(service::serve(service))
                .map_err(|e| Error::Contract(format!("service stopped: {e:#}")))?;
        }
        Command::Synth {
            out,
            positives,
            negatives,
            size,
            seed,
        } => {
            let corpus = synth::generate(
                &SynthSpec {
                    positives,
                    negatives,
                    size,
                    seed,
                },
                &out,
            )?;
            println!("{} images under {}", corpus.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": { "code": e.code(), "message": e.to_string() } });
            eprintln!("{line}");
            // Configuration problems share clap's usage exit status.
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
