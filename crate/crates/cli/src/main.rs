use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tlsh_cli::config::{load_pairs, ExperimentConfig};
use tlsh_cli::experiments::{run_lsh_sensitivity, run_store_benchmark, write_accuracy_csv, write_store_csv};
use tlsh_cli::oracle::{off_by_one_good_approx, run_oracle_suite, run_oracle_suite_with};
use tlsh_cli::{CliError, Result};
use tlsh_core::workload::{generate, write_trace, write_trace_to};

#[derive(Parser)]
#[command(name = "tlsh", version, about = "Workload-adaptive LSH experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic trace.
    Generate(ExperimentArgs),
    /// Compare pages touched (and optionally time) across store placements.
    StoreBench(ExperimentArgs),
    /// Measure Pr(hash distance <= theta | window distance <= x) per hasher.
    LshBench(ExperimentArgs),
    /// Run the exhaustive small-k checks; exits 1 on failure.
    Oracle {
        #[arg(long, default_value_t = 12)]
        k_max: usize,
        /// Widen the good-approximation bound by one (negative control).
        #[arg(long)]
        mutate: bool,
    },
}

/// Settings shared by the experiment subcommands. Flags override `--config`.
#[derive(Args)]
struct ExperimentArgs {
    /// File of key=value lines using the same names as the flags (with underscores).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    /// Parameter to vary: records_per_query, record_count, record_size, uniqueness_100, k or b.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated values for the swept parameter.
    #[arg(long)]
    values: Option<String>,
    #[arg(long)]
    num_queries: Option<String>,
    #[arg(long)]
    record_count: Option<String>,
    #[arg(long)]
    record_size: Option<String>,
    #[arg(long)]
    records_per_query: Option<String>,
    #[arg(long)]
    uniqueness_100: Option<String>,
    #[arg(long)]
    access_mode: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    jitter: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    curve: Option<String>,
    #[arg(long)]
    repetitions: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    x: Option<String>,
    #[arg(long)]
    pairs_per_query: Option<String>,
    #[arg(long)]
    fill: Option<String>,
    #[arg(long)]
    warmup: Option<String>,
    /// Add wall-clock columns; these differ between runs.
    #[arg(long)]
    with_timings: bool,
}

impl ExperimentArgs {
    fn resolve(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut pairs: Vec<(String, String)> = match &self.config {
            Some(path) => load_pairs(path)?,
            None => Vec::new(),
        };
        let flags = [
            ("experiment", &self.experiment),
            ("sweep", &self.sweep),
            ("values", &self.values),
            ("num_queries", &self.num_queries),
            ("record_count", &self.record_count),
            ("record_size", &self.record_size),
            ("records_per_query", &self.records_per_query),
            ("uniqueness_100", &self.uniqueness_100),
            ("access_mode", &self.access_mode),
            ("seed", &self.seed),
            ("jitter", &self.jitter),
            ("k", &self.k),
            ("b", &self.b),
            ("epsilon", &self.epsilon),
            ("curve", &self.curve),
            ("repetitions", &self.repetitions),
            ("theta", &self.theta),
            ("x", &self.x),
            ("pairs_per_query", &self.pairs_per_query),
            ("fill", &self.fill),
            ("warmup", &self.warmup),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                pairs.push((key.to_string(), v.clone()));
            }
        }
        if let Some(out) = &self.output {
            pairs.push(("output".into(), out.display().to_string()));
        }
        if self.with_timings {
            pairs.push(("with_timings".into(), "true".into()));
        }
        cfg.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(cfg)
    }
}

fn output(cfg: &ExperimentConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.output {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve(ExperimentConfig::store_defaults())?;
            let trace = generate(&cfg.workload)?;
            match &cfg.output {
                Some(path) => write_trace(&trace, path)?,
                None => write_trace_to(&trace, io::stdout().lock())?,
            }
        }
        Command::StoreBench(args) => {
            let cfg = args.resolve(ExperimentConfig::store_defaults())?;
            let rows = run_store_benchmark(&cfg)?;
            write_store_csv(&cfg, &rows, output(&cfg)?)?;
        }
        Command::LshBench(args) => {
            let cfg = args.resolve(ExperimentConfig::lsh_defaults())?;
            let curve = run_lsh_sensitivity(&cfg)?;
            write_accuracy_csv(&cfg, &curve, output(&cfg)?)?;
        }
        Command::Oracle { k_max, mutate } => {
            if k_max > 14 {
                return Err(CliError::Config(format!("k_max {k_max} too large for exhaustive checks (max 14)")));
            }
            let report = if mutate {
                run_oracle_suite_with(k_max, off_by_one_good_approx)
            } else {
                run_oracle_suite(k_max)
            };
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
