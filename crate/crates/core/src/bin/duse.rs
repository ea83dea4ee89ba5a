use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use duse_core::cli::{self, parse_config, RunConfig};
use duse_core::Result;

#[derive(Parser)]
#[command(name = "duse", version, about = "Prompt-tuned video expression recognition at toy scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the synthetic set and write metrics plus a checkpoint.
    Train(CommonArgs),
    /// Evaluate a checkpoint on the held-out clips of its configuration.
    Eval(CommonArgs),
    /// Run the ablation grid(s) selected by `ablate.grid`.
    Ablate(CommonArgs),
    /// Finite-difference check of the full pipeline on a tiny model.
    Gradcheck(CommonArgs),
    /// Write pooling/head traces and 2-D embeddings for a checkpoint.
    Dump(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lsea.beta=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint path (defaults to <out>/checkpoint.bin).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Allow Deep prompting with the large profile.
    #[arg(long)]
    force_deep: bool,
}

impl CommonArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(out) = &self.out {
            o.push(format!("paths.out={}", out.display()));
        }
        if let Some(ck) = &self.checkpoint {
            o.push(format!("paths.checkpoint={}", ck.display()));
        }
        o
    }

    fn config(&self) -> Result<RunConfig> {
        let seed = std::env::var("DUSE_SEED").ok();
        parse_config(self.config.as_deref(), &self.overrides(), seed.as_deref(), self.force_deep)
    }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train(a) => {
            cli::cmd_train(&a.config()?)?;
            Ok(true)
        }
        Command::Eval(a) => {
            let cfg = a.config()?;
            cli::cmd_eval(&cli::checkpoint_path(&cfg), &a.set)?;
            Ok(true)
        }
        Command::Ablate(a) => {
            cli::cmd_ablate(&a.config()?)?;
            Ok(true)
        }
        Command::Gradcheck(a) => {
            let cfg = a.config()?;
            Ok(cli::cmd_gradcheck(cfg.seed)?.passed)
        }
        Command::Dump(a) => {
            let cfg = a.config()?;
            cli::cmd_dump(&cfg, &cli::checkpoint_path(&cfg))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Cli::parse();
    match run(args.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
