use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use eggsr::dataopt::FitConfig;
use eggsr::drl::{verify_estimators, VerifyConfig, Weighting};
use eggsr::Limits;
use eggsr_cli::bench::{memory_bench, to_csv, Family};
use eggsr_cli::config::RunConfig;
use eggsr_cli::run::run;
use eggsr_cli::{extract, fit, load_dataset, parse_expr, resolve_rules, saturate, ExtractMode, UsageError, DEFAULT_RULES};

#[derive(Parser)]
#[command(name = "eggsr", version, about = "Equivalence-aware symbolic regression with e-graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Saturation {
    /// Rewrite categories (comma separated, or `all`) or a rule file.
    #[arg(long, default_value = DEFAULT_RULES)]
    rules: String,
    #[arg(long, default_value_t = 20)]
    max_iter: usize,
    #[arg(long, default_value_t = 50_000)]
    max_nodes: usize,
}

impl Saturation {
    fn limits(&self) -> Limits {
        Limits { max_iter: self.max_iter, max_nodes: self.max_nodes }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Saturate an expression and report the e-graph size.
    Saturate {
        /// Expression as a rule sequence, e.g. "A->log(A), A->A*A, A->x1, A->x2".
        expr: String,
        #[command(flatten)]
        sat: Saturation,
        /// Write the saturated graph in Graphviz format.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Print equivalent rule sequences, one per line.
    Extract {
        expr: String,
        #[command(flatten)]
        sat: Saturation,
        /// `cost` for the smallest term, `walk` for random distinct terms.
        #[arg(long, default_value = "walk")]
        mode: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the constants of an expression and print the result as JSON.
    Fit {
        expr: String,
        /// Benchmark name or CSV file (last column is the target).
        #[arg(long, default_value = "lin-log")]
        data: String,
        #[arg(long, default_value_t = 2048)]
        points: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a search described by a TOML config.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for summary.json, trace.csv and timing.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the estimators against exact values on an enumerable grammar.
    VerifyEstimator {
        /// TOML with the battery settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        draws: Option<usize>,
        /// Drop the mixture weights; the battery should then fail.
        #[arg(long)]
        forced_bug: bool,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// E-graph size against explicit variant storage as n grows.
    MemoryBench {
        /// `log-chain` or `sin-chain`.
        #[arg(long, default_value = "log-chain")]
        family: String,
        /// Range of n, e.g. `2..6` (inclusive).
        #[arg(long, default_value = "2..6")]
        n: String,
        #[arg(long, default_value_t = 20)]
        max_iter: usize,
        #[arg(long, default_value_t = 50_000)]
        max_nodes: usize,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_range(text: &str) -> Result<std::ops::RangeInclusive<u32>, UsageError> {
    let bad = || UsageError(format!("invalid range `{text}` (expected e.g. 2..6)"));
    let (lo, hi) = text.split_once("..").ok_or_else(bad)?;
    let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u32 = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Saturate { expr, sat, dot } => {
            let expr = parse_expr(&expr)?;
            let out = saturate(&expr, &resolve_rules(&sat.rules)?, &sat.limits());
            println!("{}", serde_json::to_string_pretty(&out)?);
            if let Some(path) = dot {
                write_or_print(Some(&path), &out.dot)?;
            }
        }
        Command::Extract { expr, sat, mode, k, seed } => {
            let expr = parse_expr(&expr)?;
            let mode: ExtractMode = mode.parse()?;
            for line in extract(&expr, &resolve_rules(&sat.rules)?, &sat.limits(), mode, k, seed)? {
                println!("{line}");
            }
        }
        Command::Fit { expr, data, points, noise, seed } => {
            let expr = parse_expr(&expr)?;
            let data = load_dataset(&data, points, noise, seed)?;
            let result = fit(&expr, &data, &FitConfig::default())?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Run { config, seed, out } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let output = run(&cfg)?;
            output.write(&dir)?;
            print!("{}", output.summary_json());
        }
        Command::VerifyEstimator { config, seed, draws, forced_bug, out } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
                    toml::from_str::<VerifyConfig>(&text).map_err(|e| UsageError(format!("invalid config: {e}")))?
                }
                None => VerifyConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(draws) = draws {
                cfg.draws = draws;
            }
            if forced_bug {
                cfg.weighting = Weighting::Unweighted;
            }
            let report = verify_estimators(&cfg)?;
            println!("seed {} | {} sequences, {} classes", report.seed, report.sequences, report.classes);
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(path) = out {
                write_or_print(Some(&path), &(serde_json::to_string_pretty(&report)? + "\n"))?;
            }
            return Ok(report.passed());
        }
        Command::MemoryBench { family, n, max_iter, max_nodes, out } => {
            let family: Family = family.parse().map_err(UsageError)?;
            let rows = memory_bench(family, parse_range(&n)?, &Limits { max_iter, max_nodes });
            write_or_print(out.as_deref(), &to_csv(&rows))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
