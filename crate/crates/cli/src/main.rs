use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dalab_cli::presets::DEFAULT_SEEDS;
use dalab_cli::runner::{resolve_out_root, run_custom, run_preset};
use dalab_cli::verify::{run_verify, write_report, Level};
use dalab_cli::CliError;

#[derive(Parser)]
#[command(
    name = "dalab",
    version,
    about = "Gradient-descent laboratory for training under noisy-copy data augmentation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a named preset or a JSON-configured experiment grid.
    Run {
        /// Named preset (fig2a..fig3b, fig4-synthetic).
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// JSON config file describing dataset, trainers, and seeds.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output root; defaults to $DALAB_OUT, then ./out.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Noise/init seeds, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run the Monte-Carlo verification suite and write a certificate report.
    Verify {
        /// quick = 1e3 draws per claim, full = 1e4.
        #[arg(long, default_value = "quick")]
        level: String,
        /// Output root; defaults to $DALAB_OUT, then ./out.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run {
            preset,
            config,
            out,
            seeds,
        } => {
            let out_root = resolve_out_root(out);
            let artifacts = match (preset, config) {
                (Some(name), None) => {
                    let seeds = seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
                    run_preset(&name, &out_root, &seeds)?
                }
                (None, Some(path)) => run_custom(&path, &out_root, seeds.as_deref())?,
                (None, None) => {
                    return Err(CliError::Validation(
                        "run needs either --preset or --config".into(),
                    ))
                }
                (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
            };
            println!(
                "wrote {} files to {}",
                artifacts.files.len() + 1,
                artifacts.dir.display()
            );
            for f in &artifacts.files {
                println!("  {f}");
            }
            Ok(())
        }
        Cmd::Verify { level, out } => {
            let level = Level::parse(&level)?;
            let out_root = resolve_out_root(out);
            let report = run_verify(level)?;
            let dir = out_root.join(format!("verify-{level}"));
            write_report(&report, &dir)?;
            for c in &report.certificates {
                println!("{}", c.report_line());
            }
            println!("report written to {}", dir.display());
            if report.all_pass() {
                Ok(())
            } else {
                Err(CliError::CertificateFailure(
                    report.failing_ids().join(", "),
                ))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
