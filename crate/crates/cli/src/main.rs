//! `kljn` — simulate resistor-pair key exchanges and score eavesdropping
//! attacks against them.
//!
//! Exit codes: 0 on success, 1 for configuration problems (bad flags,
//! unknown preset, invalid scenario file), 2 for failures after a valid
//! configuration started executing.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use kljn_cli::runner::{RunOptions, Summary};
use kljn_cli::{plots, presets, runner};

#[derive(Parser)]
#[command(
    name = "kljn",
    version,
    about = "KLJN key-exchange simulator and attack harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trials.csv, summary.json and plot data.
    Run {
        /// Preset name (see `list-presets`) or path to a scenario TOML file.
        #[arg(long)]
        scenario: String,
        /// Override the scenario's trial count.
        #[arg(long)]
        trials: Option<u64>,
        /// Override the scenario's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads; 0 picks one per core. Results are identical
        /// either way.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Parse a scenario and check every invariant without simulating.
    Validate {
        /// Preset name or path to a scenario TOML file.
        #[arg(long)]
        scenario: String,
    },
    /// Regenerate plot data from a completed report directory.
    Plots {
        /// Report directory of an earlier `run`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// List the built-in scenarios.
    ListPresets,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<(), (u8, String)>;

fn config_err(e: impl std::fmt::Display) -> (u8, String) {
    (EXIT_CONFIG, e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> (u8, String) {
    (EXIT_RUNTIME, e.to_string())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Run {
            scenario,
            trials,
            seed,
            out,
            threads,
        } => {
            let mut sc = presets::resolve(&scenario).map_err(config_err)?;
            if let Some(t) = trials {
                sc.trials = t;
            }
            if let Some(s) = seed {
                sc.master_seed = s;
            }
            sc.validate().map_err(config_err)?;
            let opts = RunOptions {
                out_dir: out.clone(),
                threads,
                trials: None,
                seed: None,
            };
            let summary = runner::run_scenario(&sc, &opts).map_err(runtime_err)?;
            print_summary(&summary, &out);
            Ok(())
        }
        Command::Validate { scenario } => {
            let sc = presets::resolve(&scenario).map_err(config_err)?;
            sc.validate().map_err(config_err)?;
            println!(
                "ok: {} — {} trials, {} attack(s), {} check(s){}",
                sc.name,
                sc.trials,
                sc.attacks.len(),
                sc.checks.len(),
                if sc.sweep.is_some() { ", sweep" } else { "" }
            );
            Ok(())
        }
        Command::Plots { out } => {
            let written = plots::emit(&out).map_err(runtime_err)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::ListPresets => {
            print!("{}", presets::listing().map_err(runtime_err)?);
            Ok(())
        }
    }
}

fn print_summary(summary: &Summary, out: &std::path::Path) {
    println!(
        "{}: {} trials per point",
        summary.scenario, summary.trials_per_point
    );
    for (name, rep) in &summary.attacks {
        println!(
            "  {name}: p_hat {:.4}  ci95 [{:.4}, {:.4}]  leak {:.3e} bit  abstained {}/{}",
            rep.p_hat, rep.ci95_low, rep.ci95_high, rep.leak_bits, rep.abstained, rep.trials
        );
    }
    if let Some(sweep) = &summary.sweep {
        for point in &sweep.points {
            for (name, rep) in &point.attacks {
                println!(
                    "  {} = {}: {name} p_hat {:.4}  ci95 [{:.4}, {:.4}]",
                    sweep.parameter, point.value, rep.p_hat, rep.ci95_low, rep.ci95_high
                );
            }
        }
        println!(
            "  fit ({}): theta_prime {:.4e} /ohm^2, theta {:.4e}, R^2 {:.4}",
            sweep.fit.attack, sweep.fit.theta_prime, sweep.fit.theta, sweep.fit.r_squared
        );
    }
    for (name, value) in &summary.checks {
        let pass = value.get("pass").and_then(|v| v.as_bool()).unwrap_or(false);
        println!("  check {name}: {}", if pass { "pass" } else { "FAIL" });
    }
    println!("reports in {}", out.display());
}
