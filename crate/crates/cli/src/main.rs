//! `fedup`: run, sweep and summarise federated unlearning experiments.
//!
//! Output files go to `$FEDUP_OUT_DIR` (default `./out`). Failures print a
//! single `error category=<name> message=<text>` line on stderr and exit
//! with the category's code.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedup_core::harness::{
    aggregate, emit_csv, emit_events, emit_summary_json, read_csv, read_summary_json,
    run_experiment, run_sweep, write_json, write_rows, ExperimentConfig, MetricsReport,
};
use fedup_core::{Error, Execution, Result};

const OUT_DIR_VAR: &str = "FEDUP_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "fedup",
    version,
    about = "Federated unlearning experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value` with a dot-separated key, e.g. `unlearn.p_override=0.05`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run one experiment per seed in `a..b` (end exclusive).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: String,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run seeds one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Merge run outputs from a directory into one CSV or JSON file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::Usage(format!("seeds must look like a..b, got `{spec}`"));
    let (a, b) = spec.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a >= b {
        return Err(Error::Usage(format!("empty seed range {spec}")));
    }
    Ok((a..b).collect())
}

fn out_dir() -> Result<PathBuf> {
    let dir = std::env::var_os(OUT_DIR_VAR).map_or_else(|| PathBuf::from("out"), PathBuf::from);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    let id = &report.summary.run_id;
    emit_csv(report, dir.join(format!("{id}.csv")))?;
    emit_summary_json(report, dir.join(format!("{id}.summary.json")))?;
    emit_events(report, dir.join(format!("{id}.events.log")))?;
    let s = &report.summary;
    let mal = s
        .final_malicious_acc
        .map_or_else(|| "none".to_string(), |m| format!("{m:.4}"));
    println!(
        "run_id={id} rounds={} unlearns={} test_acc={:.4} malicious_acc={mal}",
        s.rounds_run,
        s.unlearns.len(),
        s.final_test_acc
    );
    Ok(())
}

fn files_with_suffix(dir: &Path, suffix: &str, exclude: &Path) -> Result<Vec<PathBuf>> {
    let io = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(suffix) && path != exclude {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn report(input: &Path, out: &Path) -> Result<()> {
    match out.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let mut rows = Vec::new();
            for path in files_with_suffix(input, ".csv", out)? {
                rows.extend(read_csv(&path)?);
            }
            rows.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.round.cmp(&b.round)));
            write_rows(&rows, out)?;
            println!("rows={} out={}", rows.len(), out.display());
        }
        Some("json") => {
            let summaries = files_with_suffix(input, ".summary.json", out)?
                .iter()
                .map(read_summary_json)
                .collect::<Result<Vec<_>>>()?;
            let doc = serde_json::json!({
                "runs": summaries,
                "strategies": aggregate(&summaries),
            });
            write_json(&doc, out)?;
            println!("runs={} out={}", summaries.len(), out.display());
        }
        _ => {
            return Err(Error::Usage(format!(
                "report output must end in .csv or .json: {}",
                out.display()
            )))
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            overrides,
        } => {
            let mut cfg = ExperimentConfig::load(&config, &overrides)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let report = run_experiment(&cfg)?;
            write_report(&out_dir()?, &report)
        }
        Command::Sweep {
            config,
            seeds,
            overrides,
            sequential,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            cfg.validate()?;
            let seeds = parse_seeds(&seeds)?;
            let dir = out_dir()?;
            let execution = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            for result in run_sweep(&cfg, &seeds, execution) {
                write_report(&dir, &result?)?;
            }
            Ok(())
        }
        Command::Report { input, out } => report(&input, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!(
                "error category={} message={}",
                category.as_str(),
                e.to_string().replace('\n', " ")
            );
            ExitCode::from(category.exit_code())
        }
    }
}
