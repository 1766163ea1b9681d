use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use gbsde::harness::{self, RunOptions};

/// Batch driver for the G-BSDE laboratory: runs TOML experiment configs and
/// writes CSV/JSON artifacts with certificate reports.
#[derive(Parser)]
#[command(name = "gbsde", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonOpts {
    /// Output root (default: config [output].dir, then $GBSDE_OUT_DIR,
    /// then ./out).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for suite members.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Multiplies every certificate tolerance.
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
}

impl CommonOpts {
    fn to_options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out_dir.clone(),
            threads: self.threads,
            tol_scale: self.tol_scale,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Run every config listed in a manifest.
    Suite {
        manifest: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, opts } => {
            let report = harness::run(&config, &opts.to_options())
                .with_context(|| format!("running {}", config.display()))?;
            for c in &report.certificates {
                println!(
                    "{} {}: {} (tolerance {})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            for n in &report.notes {
                println!("note: {n}");
            }
            println!(
                "{} {} in {} ms, {} artifact(s)",
                if report.pass { "PASS" } else { "FAIL" },
                report.name,
                report.wall_ms,
                report.files.len()
            );
            Ok(if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Cmd::Suite { manifest, opts } => {
            let report = harness::suite(&manifest, &opts.to_options())
                .with_context(|| format!("running suite {}", manifest.display()))?;
            for entry in &report.runs {
                match &entry.error {
                    Some(e) => println!("FAIL {}: {e}", entry.config),
                    None => println!(
                        "{} {}",
                        if entry.pass { "PASS" } else { "FAIL" },
                        entry.config
                    ),
                }
            }
            println!(
                "suite: {}/{} passed",
                report.runs.iter().filter(|r| r.pass).count(),
                report.runs.len()
            );
            Ok(if report.all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Cmd::Validate { config } => {
            let summary = harness::validate(&config)
                .with_context(|| format!("validating {}", config.display()))?;
            println!("ok: {} (mode {})", summary.name, summary.mode);
            for d in &summary.details {
                println!("  {d}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
