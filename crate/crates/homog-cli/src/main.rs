//! Command line entry point: `homog solve <config.json>` runs one of the
//! configured experiments, `homog plot <run_dir>` renders SVG plots from a
//! completed run. Exit codes: 0 success, 1 configuration or I/O error,
//! 2 solver divergence.

mod config;
mod plot;
mod runner;
mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "homog",
    version,
    about = "FFT-accelerated periodic homogenization solver"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON configuration.
    Solve {
        config: PathBuf,
        /// Output directory (default: `run` next to the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-trial and per-CG-iteration traces.
        #[arg(long)]
        trace: bool,
        /// Emit a projector self-test report before solving.
        #[arg(long = "check-projector")]
        check_projector: bool,
        /// Override the configuration seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render SVG plots from a completed run directory.
    Plot { run_dir: PathBuf },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Command::Solve {
            config,
            out,
            trace,
            check_projector,
            seed,
        } => {
            let out = out.unwrap_or_else(|| {
                config
                    .parent()
                    .map(|p| p.to_path_buf())
                    .unwrap_or_default()
                    .join("run")
            });
            let flags = runner::RunFlags {
                out,
                trace,
                check_projector,
                seed_override: seed,
            };
            match runner::run(&config, &flags) {
                Ok(code) => {
                    if code == 2 {
                        eprintln!("homog: error[solver]: a solve did not converge (see reports)");
                    }
                    code
                }
                Err(e) => {
                    eprintln!("homog: error[{}]: {}", e.kind(), e.message());
                    1
                }
            }
        }
        Command::Plot { run_dir } => match plot::emit_plots(&run_dir) {
            Ok(files) => {
                for f in files {
                    println!("{}", run_dir.join(f).display());
                }
                0
            }
            Err(e) => {
                eprintln!("homog: error[{}]: {}", e.kind(), e.message());
                1
            }
        },
    };
    std::process::exit(code);
}
