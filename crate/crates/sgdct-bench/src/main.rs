use clap::{Parser, Subcommand};
use sgdct_bench::config::parse_config;
use sgdct_bench::report::{parse_cases_csv, quantile_table};
use sgdct_bench::runner::run_and_emit;
use sgdct_bench::BenchError;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sgdct-bench", about = "SGDCT estimation benchmarks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: SGDCT_WORKERS or all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print quantile tables for a previously written cases.csv.
    Quantiles { cases: PathBuf },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                BenchError::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run() -> Result<ExitCode, BenchError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| BenchError::io(&config, e))?;
            let mut cfg = parse_config(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let workers = match workers {
                Some(w) => w,
                None => std::env::var("SGDCT_WORKERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0),
            };
            let output = run_and_emit(&cfg, workers)?;
            let failed = output.failed_cases();
            println!(
                "{}: {} cases, {} failed -> {}",
                cfg.kind.name(),
                output.reports.len(),
                failed,
                cfg.output_dir.display()
            );
            if failed > 0 {
                Ok(ExitCode::from(1))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Quantiles { cases } => {
            let text = std::fs::read_to_string(&cases).map_err(|e| BenchError::io(&cases, e))?;
            let rows = parse_cases_csv(&text)?;
            // group percent errors by (t, param_name), keep insertion order by key
            let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
            for r in &rows {
                groups
                    .entry((format!("{}", r.t), r.param_name.clone()))
                    .or_default()
                    .push(r.pct_err);
            }
            println!("t,param_name,statistic,value");
            for ((t, name), errs) in groups {
                let table = quantile_table(&errs, &[0.5, 0.9, 0.99, 0.999])?;
                for (stat, value) in table {
                    println!("{t},{name},{stat},{value}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
