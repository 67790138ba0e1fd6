//! `eklab`: batch driver for the Euler-Korteweg laboratory.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use report::{CliError, Out};

#[derive(Parser, Debug)]
#[command(name = "eklab", version, about = "Euler-Korteweg scattering laboratory")]
struct Cli {
    /// TOML experiment configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel runs and maps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Forward evolution (primitive or complex form) with monitors.
    Simulate,
    /// Final-data solves, bootstrap norm, scattering errors and decay fits.
    Scatter,
    /// Second approximation and its identity checks.
    SecondApprox,
    /// Free dispersive ratios over a time grid.
    VerifyDispersive,
    /// Partition of unity, Bony reconstruction and Bernstein ratios.
    VerifyBesov,
    /// Gauge weight table and ODE residuals.
    Gauge,
    /// Resonance-set classification on a section.
    ResonanceMap,
    /// Invariant suite on the configured grid.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Scatter => "scatter",
            Command::SecondApprox => "second-approx",
            Command::VerifyDispersive => "verify-dispersive",
            Command::VerifyBesov => "verify-besov",
            Command::Gauge => "gauge",
            Command::ResonanceMap => "resonance-map",
            Command::Selftest => "selftest",
        }
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error[{}]: {}", e.category, e.message);
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match ExperimentConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(&e.into()),
    };
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output.directory = o;
    }
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&CliError::new("config", e.to_string()));
        }
    }
    let mut out = match Out::create(&cfg.output.directory) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    let outcome = match cli.command {
        Command::Simulate => commands::simulate(&cfg, &mut out),
        Command::Scatter => commands::scatter(&cfg, &mut out),
        Command::SecondApprox => commands::second_approx(&cfg, &mut out),
        Command::VerifyDispersive => commands::verify_dispersive(&cfg, &mut out),
        Command::VerifyBesov => commands::verify_besov(&cfg, &mut out),
        Command::Gauge => commands::gauge(&cfg, &mut out),
        Command::ResonanceMap => commands::resonance_map(&cfg, &mut out),
        Command::Selftest => commands::selftest(&cfg, &mut out),
    };
    let failed = outcome.as_ref().err().map(|e| CliError::new(e.category, e.message.clone()));
    if let Err(e) = out.finish(cli.command.name(), &cfg, &outcome) {
        return fail(&e);
    }
    match failed {
        Some(e) => fail(&e),
        None => ExitCode::SUCCESS,
    }
}
