use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use risloc::bounds::bounds_at;
use risloc::harness::output::channel_unit;
use risloc::harness::{run_sweep_with, run_trial, write_report, ExperimentConfig, PowerSummary, Scenario};
use risloc::params::eta;
use risloc::Error;

#[derive(Parser)]
#[command(name = "risloc", version, about = "RIS-aided mmWave positioning: Monte Carlo sweeps and bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and write CSV and plot files to --out.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sweep with optional overrides; files go to the configured output_dir.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        powers: Option<Vec<f64>>,
    },
    /// Print PEB, OEB and per-parameter root CRLBs at the nominal gains.
    Bounds {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a single trial and print every stage.
    Trial {
        #[arg(long)]
        seed: u64,
        #[arg(long, allow_negative_numbers = true)]
        power: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn print_summary(s: &PowerSummary) {
    println!(
        "P = {} dBm: {} trials, {} failed, {} catastrophic",
        s.power_dbm, s.trials, s.failed, s.catastrophic
    );
    for (q, path) in s.channel.iter().enumerate() {
        for (k, st) in path.iter().enumerate() {
            let u = channel_unit(k);
            println!(
                "  {:>8}[{q}]  coarse {:.4e}  refined {:.4e}  bound {:.4e}",
                eta::NAMES[k],
                st.rmse_coarse * u,
                st.rmse_refined * u,
                st.bound * u
            );
        }
    }
    let deg = 180.0 / std::f64::consts::PI;
    println!(
        "  position     closed-form {:.4e} m  LM {:.4e} m  PEB {:.4e} m",
        s.position.rmse_coarse, s.position.rmse_refined, s.position.bound
    );
    println!(
        "  orientation  closed-form {:.4e} deg  LM {:.4e} deg  OEB {:.4e} deg",
        s.orientation.rmse_coarse * deg,
        s.orientation.rmse_refined * deg,
        s.orientation.bound * deg
    );
}

fn sweep_and_write(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let sc = Scenario::new(cfg)?;
    let report = run_sweep_with(&sc, &cfg.sweep.powers_dbm, cfg.sweep.trials)?;
    for s in &report.summaries {
        print_summary(s);
    }
    for p in write_report(&report, out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load(Some(&config))?;
            sweep_and_write(&cfg, &out)
        }
        Command::Sweep { config, trials, powers } => {
            let mut cfg = load(Some(&config))?;
            if let Some(t) = trials {
                cfg.sweep.trials = t;
            }
            if let Some(p) = powers {
                cfg.sweep.powers_dbm = p;
            }
            cfg.validate()?;
            let out = cfg.output_dir.clone();
            sweep_and_write(&cfg, &out)
        }
        Command::Bounds { config } => {
            let cfg = load(Some(&config))?;
            let sc = Scenario::new(&cfg)?;
            let (eta0, pos0) = sc.nominal_truth()?;
            let deg = 180.0 / std::f64::consts::PI;
            for &p in &cfg.sweep.powers_dbm {
                let b = bounds_at(&sc.at_power(p), &pos0, &eta0)?;
                println!("P = {p} dBm: PEB {:.4e} m  OEB {:.4e} deg  singular {}", b.peb, b.oeb * deg, b.singular);
                for (i, v) in b.crlb_channel.iter().enumerate() {
                    let (q, k) = (i / eta::PER_PATH, i % eta::PER_PATH);
                    println!("  {:>8}[{q}]  {:.4e}", eta::NAMES[k], v.sqrt() * channel_unit(k));
                }
            }
            Ok(())
        }
        Command::Trial { seed, power, config } => {
            let cfg = load(config.as_deref())?;
            let sc = Scenario::new(&cfg)?;
            let rec = run_trial(&sc, power, seed);
            println!("{rec:#?}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::ScheduleInfeasible(_))) => {
            eprintln!("risloc: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("risloc: {e}");
            ExitCode::FAILURE
        }
    }
}
