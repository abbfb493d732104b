//! `ikc`: blind super-resolution with iterative kernel correction.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

mod commands;
mod config;
mod manifest;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "ikc", version, about = "Blind super-resolution with iterative kernel correction")]
struct Cli {
    /// Base directory for relative data paths.
    #[arg(long, env = "IKC_DATA_ROOT", global = true)]
    data_root: Option<PathBuf>,
    /// Zero wall-clock fields so reruns produce identical logs and manifests.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: commands::Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let ctx = commands::Context { data_root: cli.data_root, deterministic: cli.deterministic };
    match commands::run(&cli.command, &ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
