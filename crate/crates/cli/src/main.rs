mod commands;
mod opts;

use clap::Parser;
use opts::{Cli, Command, ConfigFile};
use serde::Serialize;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SEED_ENV: &str = "PREFALIGN_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or inputs: exit 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that went wrong after the inputs were accepted: exit 1.
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub fn usage(msg: impl Display) -> CliError {
    CliError::Usage(msg.to_string())
}

pub fn runtime(msg: impl Display) -> CliError {
    CliError::Runtime(anyhow::anyhow!("{msg}"))
}

/// Resolved global settings shared by every command.
pub struct Ctx {
    pub seed: u64,
}

impl Ctx {
    /// Provenance lines for an output header: version, command, seed and the
    /// effective configuration. Output paths are not part of the echo so that
    /// reruns into another directory stay byte-identical.
    pub fn header<C: Serialize>(&self, command: &str, config: &C) -> Result<Vec<String>, CliError> {
        let json = serde_json::to_string(config).map_err(runtime)?;
        Ok(vec![
            format!("prefalign {VERSION}"),
            format!("command {command}"),
            format!("seed {}", self.seed),
            format!("config {json}"),
        ])
    }

    pub fn meta<C: Serialize>(&self, command: &str, config: &C) -> Result<serde_json::Value, CliError> {
        let config = serde_json::to_value(config).map_err(runtime)?;
        Ok(serde_json::json!({
            "prefalign_version": VERSION,
            "command": command,
            "seed": self.seed,
            "config": config,
        }))
    }
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

pub fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn require_out(out: Option<PathBuf>, command: &str) -> Result<PathBuf, CliError> {
    out.ok_or_else(|| usage(format!("{command}: --out is required (flag or config file)")))
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = flag.or(config) {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(usage(format!("{SEED_ENV}: {e}"))),
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = read_input(p)?;
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: resolve_seed(cli.seed, config.seed)?,
    };
    match cli.command {
        Command::Field(o) => commands::field::run(o.overlay(config.field), &ctx),
        Command::Train(o) => commands::train::run(o.overlay(config.train), &ctx),
        Command::Eval(o) => commands::eval::run(o.overlay(config.eval), &ctx),
        Command::Verify(o) => commands::verify::run(o.overlay(config.verify), &ctx),
        Command::Gendata(o) => commands::gendata::run(o.overlay(config.gendata), &ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
