use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hclora::cli::{run, Command};
use hclora::config::RunConfig;

#[derive(Parser)]
#[command(name = "hclora", about = "HCLoRA gaze-following experiments on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write train/test JSONL scene sets.
    GenData(Common),
    /// Train the shortcut backbone on the saliency pretext and freeze it.
    Pretrain(Common),
    /// Adapt the frozen backbone in `train.mode`.
    Train(Common),
    /// Score a checkpoint on the test split and write a JSON report.
    Eval(Common),
    /// Finite-difference check of every op and the composed losses.
    Gradcheck(Common),
    /// Write PGM maps for test sample `render.index`.
    Render(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.cmd {
        Cmd::GenData(c) => (Command::GenData, c),
        Cmd::Pretrain(c) => (Command::Pretrain, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Gradcheck(c) => (Command::Gradcheck, c),
        Cmd::Render(c) => (Command::Render, c),
    };
    let result = RunConfig::load(Some(&common.config), &common.set)
        .and_then(|cfg| run(cmd, &cfg, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
