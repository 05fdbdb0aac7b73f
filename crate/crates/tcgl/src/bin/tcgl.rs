//! Command-line entry point: pretraining, evaluation probes, retrieval,
//! invariant verification, embedding export, and ablation sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tcgl::harness::ablate::{self, Axis};
use tcgl::harness::checkpoint::ModelCheckpoint;
use tcgl::harness::config::TrainConfig;
use tcgl::harness::eval::{embed_all, export_embeddings, retrieval_topk};
use tcgl::harness::train::{self, generate_dataset, order_accuracy};
use tcgl::harness::verify;
use tcgl::Result;

#[derive(Parser)]
#[command(name = "tcgl", about = "Self-supervised video representation learning sandbox")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to a key=value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed, overriding the config file's value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints, metrics, and tables.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Existing checkpoint to evaluate or resume from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch (or resume) and write final/best checkpoints.
    Pretrain(Common),
    /// Order-prediction accuracy of a checkpoint on a fresh evaluation set.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Number of evaluation videos.
        #[arg(long, default_value_t = 200)]
        videos: usize,
    },
    /// Nearest-neighbor retrieval accuracy of a checkpoint.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 160)]
        gallery: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        /// Comma-separated list of k values.
        #[arg(long, default_value = "1,5")]
        k: String,
    },
    /// Run every invariant suite and print a PASS/FAIL report.
    Verify(Common),
    /// Export video embeddings as comma-separated text.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        videos: usize,
    },
    /// Rerun training while varying one configuration axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Axis name: n, m, gcn_depth, alpha_beta, asop, stkd, lambda, view.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; pair axes use a:b, switches use on/off.
        #[arg(long)]
        values: String,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Checkpoint for evaluation commands; --seed still overrides its config's
/// dataset seed so probes can draw fresh splits.
fn load_checkpoint(common: &Common) -> Result<(ModelCheckpoint, TrainConfig)> {
    let path = common.checkpoint.as_ref().ok_or_else(|| {
        tcgl::TcglError::InvalidConfig("--checkpoint is required for this command".into())
    })?;
    let ckpt = ModelCheckpoint::load(path)?;
    let mut cfg = ckpt.config.clone();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok((ckpt, cfg))
}

fn run() -> Result<bool> {
    match Cli::parse().command {
        Command::Pretrain(common) => {
            let cfg = load_config(&common)?;
            let resume = match &common.checkpoint {
                Some(path) => Some(ModelCheckpoint::load(path)?),
                None => None,
            };
            std::fs::create_dir_all(&common.out)?;
            let out = train::pretrain(&cfg, resume)?;
            out.final_ckpt.save(&common.out.join("final.ckpt"))?;
            out.best_ckpt.save(&common.out.join("best.ckpt"))?;
            out.log.save(&common.out.join("metrics.csv"))?;
            let last = out.log.rows.last().expect("epochs >= 1");
            println!(
                "trained {} epochs: final val acc {:.4}, best val acc {:.4} (epoch {})",
                last.epoch, last.val_acc, out.best_val_acc, out.best_ckpt.epoch
            );
            Ok(true)
        }
        Command::Probe { common, videos } => {
            let (ckpt, mut cfg) = load_checkpoint(&common)?;
            cfg.val_videos = videos;
            let eval_videos = generate_dataset(&cfg, "data.probe", videos)?;
            let acc = order_accuracy(&ckpt.model, &cfg, &eval_videos, "probe")?;
            println!(
                "order accuracy {:.4} over {} tuples (chance {:.4})",
                acc,
                videos,
                1.0 / tcgl::synthvideo::factorial(cfg.n) as f64
            );
            Ok(true)
        }
        Command::Retrieve { common, gallery, queries, k } => {
            let (ckpt, cfg) = load_checkpoint(&common)?;
            let ks: Vec<usize> = k
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        tcgl::TcglError::InvalidConfig(format!("bad k value '{s}'"))
                    })
                })
                .collect::<Result<_>>()?;
            let gallery_videos = generate_dataset(&cfg, "data.gallery", gallery)?;
            let query_videos = generate_dataset(&cfg, "data.query", queries)?;
            let g = embed_all(&ckpt.model, &cfg, &gallery_videos)?;
            let q = embed_all(&ckpt.model, &cfg, &query_videos)?;
            let accs = retrieval_topk(&g, &q, &ks, false)?;
            for (k, acc) in ks.iter().zip(accs) {
                println!("top-{k} retrieval accuracy {acc:.4}");
            }
            Ok(true)
        }
        Command::Verify(common) => {
            let cfg = load_config(&common)?;
            let report = verify::run_all(cfg.seed)?;
            print!("{}", report.render());
            Ok(report.all_passed())
        }
        Command::Export { common, videos } => {
            let (ckpt, cfg) = load_checkpoint(&common)?;
            std::fs::create_dir_all(&common.out)?;
            let vids = generate_dataset(&cfg, "data.export", videos)?;
            let path = common.out.join("embeddings.csv");
            export_embeddings(&ckpt.model, &cfg, &vids, &path)?;
            println!("wrote {} embeddings to {}", vids.len(), path.display());
            Ok(true)
        }
        Command::Ablate { common, axis, values } => {
            let cfg = load_config(&common)?;
            let axis = Axis::parse(&axis)?;
            let values: Vec<&str> = values.split(',').map(str::trim).collect();
            let table = ablate::run_axis(&cfg, axis, &values)?;
            print!("{}", table.render());
            std::fs::create_dir_all(&common.out)?;
            std::fs::write(
                common.out.join(format!("ablation_{}.csv", table.axis.name())),
                table.to_csv(),
            )?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
