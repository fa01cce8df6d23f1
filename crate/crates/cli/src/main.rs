use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hypamr::driver::{compare_uniform_vs_amr, format_summary, run, RunConfig};

#[derive(Parser)]
#[command(
    name = "hypamr",
    about = "Adaptive quadtree finite-element solver for shallow water and compressible gas flows",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a key=value config file
    Run {
        /// Path to the config file (see `hypamr template` for the format)
        config: PathBuf,
        /// Disable the projection limiter during mesh transfer (ablation)
        #[arg(long)]
        no_limiter: bool,
        /// Run on a uniformly refined mesh with adaptation disabled
        #[arg(long)]
        uniform: bool,
        /// Override the seed echoed into outputs
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for conservation.csv, dofs.csv, and VTK snapshots
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run both the adaptive and the uniformly refined variant of a config
    /// and report the degrees-of-freedom and wall-time ratios
    Compare {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print a config template for a built-in scenario
    Template {
        /// One of: dam_break, blast, jet
        name: String,
    },
}

fn load(path: &PathBuf) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    RunConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn main_inner() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            no_limiter,
            uniform,
            seed,
            output_dir,
        } => {
            let mut cfg = load(&config)?;
            if no_limiter {
                cfg.limiter = false;
            }
            if uniform {
                cfg.uniform = true;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let summary = run(&cfg, output_dir.as_deref()).map_err(|e| e.to_string())?;
            print!("{}", format_summary(&summary));
            if let Some(reason) = &summary.failure {
                return Err(format!("run terminated early: {reason}"));
            }
            Ok(())
        }
        Command::Compare { config, output_dir } => {
            let cfg = load(&config)?;
            let report =
                compare_uniform_vs_amr(&cfg, output_dir.as_deref()).map_err(|e| e.to_string())?;
            println!("== adaptive ==");
            print!("{}", format_summary(&report.adaptive));
            println!("== uniform ==");
            print!("{}", format_summary(&report.uniform));
            println!(
                "dof_ratio = {:.4}\nwall_ratio = {:.4}",
                report.dof_ratio, report.wall_ratio
            );
            Ok(())
        }
        Command::Template { name } => {
            let body = match name.as_str() {
                "dam_break" => "schema = 1\npreset = dam_break\n",
                "blast" => "schema = 1\npreset = blast\n",
                "jet" => "schema = 1\npreset = jet\n",
                _ => return Err(format!("unknown template '{name}' (expected dam_break, blast, or jet)")),
            };
            print!("{body}");
            Ok(())
        }
    }
}
