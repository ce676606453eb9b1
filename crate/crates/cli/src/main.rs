//! `hac-lrt`: sampling, fitting, testing, information estimation, power
//! curves, determinant scans and simulation scenarios from the command line.

mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use hac_lrt::error::{ErrorKind, HacError, Result};

use crate::config::{Cli, Command, RunConfig};

fn exit_code(e: &HacError) -> u8 {
    match e.kind() {
        ErrorKind::Numerical => 3,
        ErrorKind::Domain | ErrorKind::Io => 2,
    }
}

fn resolve(cli: Cli) -> Result<RunConfig> {
    if let Command::Rerun(r) = &cli.command {
        let text = std::fs::read_to_string(&r.manifest)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if matches!(cfg.command, Command::Rerun(_)) {
            return Err(HacError::Argument("manifest describes a rerun".into()));
        }
        if cli.out.is_some() {
            cfg.out = cli.out;
        }
        return Ok(cfg);
    }
    let format = cli.format.unwrap_or_else(|| cli.command.default_format());
    Ok(RunConfig { version: env!("CARGO_PKG_VERSION").into(), seed: cli.seed, jobs: cli.jobs, out: cli.out, format, command: cli.command })
}

fn execute(cfg: &RunConfig) -> Result<()> {
    if cfg.jobs > 0 {
        // a second initialization only happens in tests and is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
    let out = commands::run(cfg)?;
    let manifest = serde_json::to_string_pretty(cfg)? + "\n";
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, &out.main)?;
            for (suffix, text) in &out.side {
                std::fs::write(format!("{path}{suffix}"), text)?;
            }
            std::fs::write(format!("{path}.manifest.json"), manifest)?;
        }
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(out.main.as_bytes())?;
            for (_, text) in &out.side {
                so.write_all(text.as_bytes())?;
            }
            eprintln!("{}", serde_json::json!({ "manifest": cfg }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match resolve(cli).and_then(|cfg| execute(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let body = serde_json::json!({ "error": e.tag(), "message": e.to_string(), "exit_code": code });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
