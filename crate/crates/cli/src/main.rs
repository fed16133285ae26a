use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use elrcn_cli::commands;
use elrcn_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "elrcn", version, about = "Enriched CNN-LSTM micro-expression recognition")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Folds trained concurrently.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Model variant: se, te, flow, strain, gray or pixels.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Model scale: desk or paper.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Extra `section.key=value` overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic databases with ground-truth motion.
    Synth,
    /// Compute and cache optical flow for every video.
    Preprocess,
    /// Train on a whole database and save a checkpoint.
    Train,
    /// Run an evaluation protocol with per-fold training.
    Evaluate {
        /// loso, cde or hde.
        #[arg(long)]
        protocol: Option<String>,
    },
    /// Evaluate every cell of an ablation grid.
    Ablate {
        /// spatial_only, temporal_only, fc_layer or lstm_grid.
        #[arg(long)]
        axis: Option<String>,
    },
    /// Export a Grad-CAM overlay and heatmap for one video.
    Gradcam {
        #[arg(long)]
        video_id: Option<String>,
        #[arg(long)]
        frame_idx: Option<usize>,
        #[arg(long)]
        class: Option<usize>,
        /// flow, strain or gray (TE models).
        #[arg(long)]
        encoder: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn path_value(p: &std::path::Path) -> String {
    quoted(&p.to_string_lossy())
}

fn overrides(cli: &Cli) -> Vec<String> {
    let mut o = Vec::new();
    if let Some(p) = &cli.out {
        o.push(format!("out={}", path_value(p)));
    }
    if let Some(s) = cli.seed {
        o.push(format!("seed={s}"));
    }
    if let Some(j) = cli.jobs {
        o.push(format!("jobs={j}"));
    }
    if let Some(v) = &cli.variant {
        o.push(format!("model.variant={}", quoted(v)));
    }
    if let Some(p) = &cli.preset {
        o.push(format!("model.preset={}", quoted(p)));
    }
    match &cli.command {
        Command::Evaluate { protocol: Some(p) } => o.push(format!("eval.protocol={}", quoted(p))),
        Command::Ablate { axis: Some(a) } => o.push(format!("ablation.axis={}", quoted(a))),
        Command::Gradcam {
            video_id,
            frame_idx,
            class,
            encoder,
            checkpoint,
        } => {
            if let Some(v) = video_id {
                o.push(format!("gradcam.video_id={}", quoted(v)));
            }
            if let Some(f) = frame_idx {
                o.push(format!("gradcam.frame_idx={f}"));
            }
            if let Some(c) = class {
                o.push(format!("gradcam.class={c}"));
            }
            if let Some(e) = encoder {
                o.push(format!("gradcam.encoder={}", quoted(e)));
            }
            if let Some(c) = checkpoint {
                o.push(format!("gradcam.checkpoint={}", path_value(c)));
            }
        }
        _ => {}
    }
    o.extend(cli.set.iter().cloned());
    o
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides(cli))?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg),
        Command::Preprocess => commands::cmd_preprocess(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Evaluate { .. } => commands::cmd_evaluate(&cfg),
        Command::Ablate { .. } => commands::cmd_ablate(&cfg),
        Command::Gradcam { .. } => commands::cmd_gradcam(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
