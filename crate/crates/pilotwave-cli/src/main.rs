//! `pilotwave`: run, validate, and list guided-trajectory scenarios.
//!
//! Exit codes: 0 run passed, 1 an assertion failed, 2 configuration error,
//! 3 runtime failure.

mod config;
mod runner;
mod scenarios;

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pilotwave",
    version,
    about = "Spectral quantum evolution with guided trajectory ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        /// Path to a scenario TOML file, or the name of a shipped scenario.
        config: String,
        /// Output directory (default: runs/<scenario-name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores, or PILOTWAVE_THREADS).
        #[arg(long)]
        threads: Option<usize>,
        /// Replace the scenario's RNG seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Parse and validate a scenario file, reporting every problem found.
    Validate {
        /// Path to a scenario TOML file.
        config: String,
    },
    /// List the shipped scenarios.
    ListScenarios,
}

fn load_scenario_text(spec: &str) -> Result<String, String> {
    let path = Path::new(spec);
    if path.is_file() {
        return std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()));
    }
    if let Some(shipped) = scenarios::find(spec) {
        return Ok(shipped.text.to_string());
    }
    Err(format!(
        "`{spec}` is neither a readable file nor a shipped scenario (see `pilotwave list-scenarios`)"
    ))
}

fn parse_or_report(text: &str) -> Result<config::ScenarioConfig, ()> {
    match config::parse_scenario(text) {
        Ok(cfg) => Ok(cfg),
        Err(errors) => {
            eprintln!("configuration invalid ({} problem(s)):", errors.len());
            for err in errors {
                eprintln!("  {err}");
            }
            Err(())
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let count = flag.or_else(|| {
        std::env::var("PILOTWAVE_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(threads) = count {
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool already initialised: {err}");
        }
    }
}

fn run(spec: &str, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> u8 {
    init_threads(threads);
    let text = match load_scenario_text(spec) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("{msg}");
            return 2;
        }
    };
    let Ok(mut cfg) = parse_or_report(&text) else { return 2 };
    if let Some(seed) = seed {
        if cfg.run.seed.is_none() && cfg.kind.samples_ensemble() {
            // unreachable after validation, but keep the override total
            log::warn!("scenario had no seed; applying the override anyway");
        }
        cfg.run.seed = Some(seed);
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    match runner::run_scenario(&cfg, &out_dir) {
        Ok(passed) => {
            let verdict = if passed { "pass" } else { "FAIL" };
            println!(
                "{}: {verdict} (summary: {})",
                cfg.name,
                out_dir.join("summary.json").display()
            );
            if passed {
                0
            } else {
                1
            }
        }
        Err(err) => {
            eprintln!("{}: runtime failure: {err:#}", cfg.name);
            3
        }
    }
}

fn validate(spec: &str) -> u8 {
    let text = match load_scenario_text(spec) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("{msg}");
            return 2;
        }
    };
    match parse_or_report(&text) {
        Ok(cfg) => {
            println!("{}: ok (kind {})", cfg.name, cfg.kind.label());
            0
        }
        Err(()) => 2,
    }
}

fn list_scenarios() -> u8 {
    let width = scenarios::SCENARIOS.iter().map(|s| s.name.len()).max().unwrap_or(0);
    for s in scenarios::SCENARIOS {
        println!("{:width$}  {:13} {}", s.name, s.kind, s.description);
    }
    0
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, threads, seed_override } => {
            run(&config, out, threads, seed_override)
        }
        Command::Validate { config } => validate(&config),
        Command::ListScenarios => list_scenarios(),
    };
    ExitCode::from(code)
}
