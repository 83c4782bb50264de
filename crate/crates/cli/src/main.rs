use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fokker_flux::experiments::{
    self, gamma_sweep, mass_evolution_with, preset, MassPreset, RunConfig, RunSummary, PRESETS,
};
use fokker_flux::{friedrichs_k, symmetric_k, ErrorClass, FluxError};

#[derive(Parser)]
#[command(name = "fokker-flux", version, about = "Fokker-Planck runs with in- and outflow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named preset.
    #[command(after_help = format!("presets: {}", PRESETS.join(", ")))]
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// n = 100, dt = 2e-5 instead of the full preset resolution.
        #[arg(long)]
        coarse: bool,
    },
    /// Fitted entropy decay rate as a function of the potential strength (model A).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        gamma: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest Robin eigenvalues behind model A's decay rate.
    Eigen {
        #[arg(long)]
        beta: f64,
        /// Boundary weights of the Friedrichs quotient.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        weights: Option<Vec<f64>>,
    },
}

fn print_summary(s: &RunSummary, files: &[PathBuf]) {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    println!("model {} on n = {}, dt = {:e}, {} steps", s.model, s.config.n, s.dt, s.steps);
    println!("fitted rate      {}", fmt(s.fitted_rate));
    if let Some(e) = &s.fit_error {
        println!("  fit skipped: {e}");
    }
    println!("predicted rate   {}", fmt(s.predicted_rate.map(|p| p.value)));
    println!("final sup dist   {:.6e}", s.final_sup_distance);
    println!("mass             {:.6} -> {:.6} (stationary {:.6})", s.initial_mass, s.final_mass, s.stationary_mass_closed);
    println!("wall clock       {:.2} s", s.wall_clock_seconds);
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn execute(cli: Cli) -> Result<(), FluxError> {
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(out) = out {
                cfg.outputs = out;
            }
            let outcome = experiments::run(&cfg)?;
            print_summary(outcome.summary(), &outcome.files);
        }
        Command::Preset { name, out, coarse } => {
            let mut cfg = preset(&name)?;
            if coarse {
                cfg = cfg.coarse();
            }
            if let Some(out) = out {
                cfg.outputs = out;
            }
            let mass = match name.as_str() {
                "mass1" => Some(MassPreset::Mass1),
                "mass2" => Some(MassPreset::Mass2),
                _ => None,
            };
            let outcome = experiments::run(&cfg)?;
            print_summary(outcome.summary(), &outcome.files);
            if let Some(which) = mass {
                let r = mass_evolution_with(which, &cfg, Some(&cfg.outputs))?;
                let show = |e: Option<experiments::Extremum>| {
                    e.map_or("none".to_string(), |e| format!("{:.6} at t = {:.4}", e.value, e.time))
                };
                println!("interior maximum {}", show(r.interior_maximum));
                println!("interior minimum {}", show(r.interior_minimum));
            }
        }
        Command::Sweep { config, gamma, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let dir = out.unwrap_or_else(|| cfg.outputs.clone());
            let rows = gamma_sweep(&cfg, &gamma, Some(&dir))?;
            println!("{:>10} {:>14} {:>10}", "gamma", "fitted slope", "r^2");
            for r in rows {
                println!("{:>10} {:>14.6} {:>10.6}", r.gamma, r.fitted_slope, r.r_squared);
            }
            println!("wrote {}", dir.join("sweep.csv").display());
        }
        Command::Eigen { beta, weights } => {
            let symmetric = symmetric_k(beta)?;
            let friedrichs = match weights {
                Some(w) if w.len() == 2 => Some(friedrichs_k(w[0], w[1])?),
                Some(w) => {
                    return Err(FluxError::Config(format!(
                        "--weights takes two values w0,w1, got {}",
                        w.len()
                    )))
                }
                None => None,
            };
            let out = serde_json::json!({ "symmetric": symmetric, "friedrichs": friedrichs });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Runtime => 3,
                ErrorClass::Io => 4,
            })
        }
    }
}
