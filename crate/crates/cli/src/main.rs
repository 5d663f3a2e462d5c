use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protomoco::config::RunConfig;
use protomoco::pipeline::{self, Aggregate};
use protomoco::Error;

/// Momentum-contrastive pretraining and prototypical few-shot evaluation.
///
/// Exit status: 0 on success, 2 on a configuration or usage error, 3 when
/// the run itself fails (including a failed gradient check).
#[derive(Parser)]
#[command(name = "protomoco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `section.key = value` file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Contrastive pretraining; writes a checkpoint and a per-epoch log.
    Pretrain(Common),
    /// Episodic fine-tuning of a checkpoint's encoder.
    Fewshot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Group-level k-fold few-shot evaluation; without a checkpoint the
    /// encoder starts from random initialization.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes the synthetic blob/ring dataset.
    SynthData(Common),
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> protomoco::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn init_threads() -> protomoco::Result<()> {
    let Ok(v) = std::env::var("PROTOMOCO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("PROTOMOCO_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn show(name: &str, a: Aggregate) {
    match a {
        Some((m, s)) => println!("{name:<10} {m:.4} ± {s:.4}"),
        None => println!("{name:<10} undefined"),
    }
}

fn run(cli: Cli) -> protomoco::Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Pretrain(c) => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let r = pipeline::cmd_pretrain(&cfg, &c.out)?;
            if let (Some(first), Some(last)) = (r.epochs.first(), r.epochs.last()) {
                println!(
                    "{} epochs, loss {:.4} -> {:.4}, similarity gap {:.3}",
                    r.epochs.len(),
                    first.loss,
                    last.loss,
                    last.similarity_gap()
                );
            }
            println!("checkpoint: {}", c.out.join(pipeline::CHECKPOINT).display());
        }
        Command::Fewshot { common: c, checkpoint } => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let logs = pipeline::cmd_fewshot(&cfg, &checkpoint, &c.out)?;
            if let Some(last) = logs.last() {
                println!("{} episodes, last loss {:.4}", logs.len(), last.loss);
            }
            println!("checkpoint: {}", c.out.join(pipeline::FINETUNED).display());
        }
        Command::Eval { common: c, checkpoint } => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let s = pipeline::cmd_eval(&cfg, checkpoint.as_deref(), &c.out)?;
            println!("{} folds evaluated, {} skipped", s.folds.len(), s.skipped.len());
            show("accuracy", s.accuracy());
            show("precision", s.precision());
            show("recall", s.recall());
            show("auc", s.auc());
            println!("report: {}", c.out.join(pipeline::REPORT_TXT).display());
        }
        Command::Gradcheck { config, seed, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let checks = pipeline::cmd_gradcheck(&cfg, out.as_deref())?;
            print!("{}", pipeline::gradcheck_table(&checks));
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::SynthData(c) => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let d = pipeline::cmd_synth(&cfg, &c.out)?;
            println!("{} images written to {}", d.images.len(), c.out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
