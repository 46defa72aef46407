use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

mod cmd_cantor;
mod cmd_modulus;
mod cmd_tube;
mod cmd_verify;
mod cmd_wiggle;
mod config;
mod exit;
mod output;
mod props;
mod render;

use output::OutDir;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Cantor,
    Modulus,
    Tube,
    Wiggle,
    Verify,
}

#[derive(Debug, Parser)]
#[command(name = "qcdistort", version, about = "Numerical experiments on quasiconformal distortion of product sets")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON config; `{}` selects every default.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn pipeline<C, F>(name: &str, cli: &Cli, run: F) -> Result<()>
where
    C: DeserializeOwned + Serialize,
    F: FnOnce(&C, &Path, &mut OutDir) -> Result<()>,
{
    let cfg: C = config::load(&cli.config)?;
    let base = cli.config.parent().unwrap_or(Path::new("."));
    let mut out = OutDir::open(&cli.out)?;
    run(&cfg, base, &mut out)?;
    let (manifest, deferred) = out.finish(name, cli.seed, &cfg)?;
    for c in &manifest.checks {
        println!("{:<28} {}", c.name, c.status);
    }
    for f in &manifest.flags {
        println!("flag: {f}");
    }
    println!("{} artifacts written to {}", manifest.artifacts.len(), cli.out.display());
    deferred.map_or(Ok(()), Err)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match cli.command {
        Command::Cantor => pipeline("cantor", cli, |c, _, o| cmd_cantor::run(c, o)),
        Command::Modulus => pipeline("modulus", cli, |c, base, o| cmd_modulus::run(c, base, o)),
        Command::Tube => pipeline("tube", cli, |c, _, o| cmd_tube::run(c, o)),
        Command::Wiggle => pipeline("wiggle", cli, |c, _, o| cmd_wiggle::run(c, o)),
        Command::Verify => pipeline("verify", cli, |c, base, o| cmd_verify::run(c, base, cli.seed, o)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_of(&e) as u8)
        }
    }
}
