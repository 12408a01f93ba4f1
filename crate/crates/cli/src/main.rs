use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use stackdelay_cli::bench::{run_bench, BenchOptions};
use stackdelay_cli::config::{CommonArgs, OutputFormat, RunConfig};
use stackdelay_cli::maskdump::mask_artifacts;
use stackdelay_cli::schedule::schedule_dump;
use stackdelay_cli::separation::{separation_csv, separation_table};
use stackdelay_cli::simulate::{occupancy_summary, trace_csv};
use stackdelay_cli::verify::run_verify;

#[derive(Parser)]
#[command(
    name = "stackdelay",
    version,
    about = "Schedule, simulate, verify, and benchmark interleaved codebook decoding patterns"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the materialized decoding schedule as JSON
    Schedule,
    /// Replay cache occupancy; per-pattern accounting plus a CSV trace
    Simulate,
    /// Render the dense attention mask
    Mask,
    /// Run the layout, mask, and decode-equivalence suite
    Verify {
        /// Flip one mask bit per case to prove the suite can fail
        #[arg(long)]
        inject_mask_corruption: bool,
    },
    /// Time guided incremental decoding for each pattern
    Bench {
        /// Timed runs per pattern (the report takes medians)
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Untimed runs before measuring
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Evaluate each step's streams one at a time
        #[arg(long)]
        sequential_streams: bool,
    },
    /// Tabulate adjacent-timestep schedule gaps per window size
    Separation {
        /// Comma-separated window sizes (default 1,2,3,4, or -k when given)
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<usize>>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = RunConfig::resolve(&cli.common)?;
    match cli.command {
        Command::Schedule => {
            emit_text(&cfg, "schedule.json", &pretty(&schedule_dump(&cfg)?)?)?;
            Ok(true)
        }
        Command::Simulate => {
            let summary = pretty(&occupancy_summary(&cfg)?)?;
            let trace = trace_csv(&cfg)?;
            match (&cfg.out, cfg.format) {
                (Some(_), _) => {
                    emit_text(&cfg, "summary.json", &summary)?;
                    emit_text(&cfg, "trace.csv", &trace)?;
                }
                (None, OutputFormat::Json) => println!("{summary}"),
                (None, OutputFormat::Csv) => print!("{trace}"),
            }
            Ok(true)
        }
        Command::Mask => {
            let artifacts = mask_artifacts(&cfg)?;
            match (&cfg.out, cfg.format) {
                (Some(_), _) => {
                    emit_text(&cfg, "mask.txt", &artifacts.text)?;
                    emit_bytes(&cfg, "mask.bin", &artifacts.packed)?;
                    emit_text(&cfg, "mask.json", &pretty(&artifacts.to_json())?)?;
                }
                (None, OutputFormat::Json) => println!("{}", pretty(&artifacts.to_json())?),
                (None, OutputFormat::Csv) => print!("{}", artifacts.text),
            }
            Ok(true)
        }
        Command::Verify {
            inject_mask_corruption,
        } => {
            let report = run_verify(&cfg, inject_mask_corruption)?;
            emit_text(&cfg, "verify.json", &pretty(&report)?)?;
            for cell in report.cells.iter().filter(|cell| !cell.pass) {
                eprintln!("failed: {}", cell.describe_failure());
            }
            Ok(report.all_pass)
        }
        Command::Bench {
            runs,
            warmup,
            sequential_streams,
        } => {
            let opts = BenchOptions {
                runs,
                warmup,
                parallel_streams: !sequential_streams,
            };
            emit_text(&cfg, "bench.json", &pretty(&run_bench(&cfg, &opts)?)?)?;
            Ok(true)
        }
        Command::Separation { windows } => {
            let windows = windows.unwrap_or_else(|| {
                if cfg.pinned.window {
                    vec![cfg.window]
                } else {
                    vec![1, 2, 3, 4]
                }
            });
            // gaps need base(t+1), so stop one short of the last timestep
            let report = separation_table(&windows, cfg.timesteps.saturating_sub(1));
            match cfg.format {
                OutputFormat::Json => emit_text(&cfg, "separation.json", &pretty(&report)?)?,
                OutputFormat::Csv => {
                    let csv = separation_csv(&report);
                    match &cfg.out {
                        Some(_) => emit_text(&cfg, "separation.csv", &csv)?,
                        None => print!("{csv}"),
                    }
                }
            }
            Ok(true)
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

/// Prints to stdout, or writes into the output directory when one is
/// configured (announcing the path on stderr to keep stdout parseable).
fn emit_text(cfg: &RunConfig, name: &str, contents: &str) -> Result<()> {
    match &cfg.out {
        Some(dir) => {
            let path = dir.join(name);
            write_file(&path, contents.as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{}", contents.trim_end_matches('\n')),
    }
    Ok(())
}

fn emit_bytes(cfg: &RunConfig, name: &str, contents: &[u8]) -> Result<()> {
    let dir = cfg
        .out
        .as_ref()
        .expect("binary artifacts are only written with --out");
    let path = dir.join(name);
    write_file(&path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating output directory {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
