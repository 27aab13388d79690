use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dbsde::experiment::{
    fmt_float, oracle_table, run_experiment, ExperimentConfig, ExperimentError, Overrides, Preset,
};

#[derive(Parser)]
#[command(name = "dbsde", about = "Deep BSDE option pricing under differential rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured solver and write CSV artifacts.
    Run {
        /// JSON config file.
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Number of mini-batches per run.
        #[arg(long)]
        batches: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Print the built-in presets as JSON.
    Presets,
    /// PDE upper and lower prices for a preset.
    Oracle { preset: String },
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            batches,
            batch_size,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            cfg.apply(&Overrides {
                seed,
                out_dir,
                n_batches: batches,
                batch_size,
            });
            cfg.validate()?;
            let artifacts = run_experiment(&cfg)?;
            for row in &artifacts.summary {
                println!(
                    "{:<28} {:<8} {:>12} [{}, {}] {:.1}s",
                    row.method,
                    row.backstep,
                    fmt_float(row.price),
                    fmt_float(row.range_min),
                    fmt_float(row.range_max),
                    row.wall_time
                );
            }
            println!("artifacts in {}", artifacts.out_dir.display());
        }
        Command::Presets => {
            let all: serde_json::Map<String, serde_json::Value> = Preset::ALL
                .iter()
                .map(|p| (p.name().to_string(), serde_json::to_value(p.config()).expect("preset serializes")))
                .collect();
            println!("{}", serde_json::to_string_pretty(&all).expect("json"));
        }
        Command::Oracle { preset } => {
            let cfg = Preset::parse(&preset)?.config();
            println!("x0,upper,lower");
            for row in oracle_table(&cfg)? {
                println!("{},{},{}", fmt_float(row.x0), fmt_float(row.upper), fmt_float(row.lower));
            }
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
