//! `recombkin`: batch runner for kinetics, simulation and audit experiments.
//!
//! Data goes to files in the output directory; messages go to stderr.
//! Exit codes: 0 success, 1 invalid input, 2 numeric failure, 3 audit failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Args, Debug)]
struct Flags {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `dotted.key=value`; the value is read as JSON, or as a string if it
    /// does not parse. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Failure classes, one per non-zero exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numeric(String),
    Audit(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Audit(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numeric(m) | Failure::Audit(m) => m,
        }
    }
}

impl From<recombkin::Error> for Failure {
    fn from(e: recombkin::Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Validation(format!("json: {e}"))
    }
}

#[derive(Parser, Debug)]
#[command(name = "recombkin", version, about = "Genome kinetics under mutation and homologous recombination")]
struct Invocation {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Check the mutation and recombination models.
    Validate(Flags),
    /// Write the product stationary law and its site factors.
    Stationary(Flags),
    /// Integrate the kinetic equation and audit the entropy decay.
    Integrate(Flags),
    /// Simulate finite populations.
    Simulate(Flags),
    /// Run the entropy-inequality checks over seeded random instances.
    Verify(Flags),
    /// Compare pairwise-distance histograms with the product-law prediction.
    Diagnose(Flags),
}

fn main() -> ExitCode {
    let inv = Invocation::parse();
    let (name, flags, run): (&str, &Flags, commands::Runner) = match &inv.command {
        Sub::Validate(f) => ("validate", f, commands::validate),
        Sub::Stationary(f) => ("stationary", f, commands::stationary),
        Sub::Integrate(f) => ("integrate", f, commands::integrate),
        Sub::Simulate(f) => ("simulate", f, commands::simulate),
        Sub::Verify(f) => ("verify", f, commands::verify),
        Sub::Diagnose(f) => ("diagnose", f, commands::diagnose),
    };
    match prepare(flags).and_then(|ctx| run(&ctx)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{name}: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn prepare(flags: &Flags) -> Result<commands::Context, Failure> {
    let text = std::fs::read_to_string(&flags.config)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", flags.config.display())))?;
    let mut cfg = config::load(&text, &flags.overrides)?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &flags.out {
        cfg.output = out.to_string_lossy().into_owned();
    }
    let out = PathBuf::from(&cfg.output);
    std::fs::create_dir_all(&out)?;
    output::write_json(&out.join("resolved_config.json"), &cfg)?;
    Ok(commands::Context { cfg, out })
}
