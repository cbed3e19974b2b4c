//! The `run` command: one search on one benchmark, with its outputs.

use std::path::Path;
use std::time::Instant;

use eggsr::dataopt::{benchmark, TopK};
use eggsr::drl::{train, EstimatorKind, Policy};
use eggsr::mcts::run_mcts;
use eggsr::rewrite::builtin_rules_named;
use serde::Serialize;

use crate::config::{Algorithm, RunConfig};
use crate::UsageError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Best {
    pub sequence: String,
    pub expression: String,
    pub coefficients: Vec<f64>,
    pub nmse: f64,
    pub mse: f64,
    pub rmse: f64,
    pub nrmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopRow {
    pub sequence: String,
    pub expression: String,
    pub nmse: f64,
}

/// Contents of `summary.json`. Holds no wall-clock values, so reruns of
/// the same configuration are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub benchmark: String,
    pub truth: String,
    pub algorithm: String,
    pub seed: u64,
    pub noise: f64,
    pub n_points: usize,
    pub iterations_run: usize,
    pub best: Option<Best>,
    pub top_k: Vec<TopRow>,
    pub median_top_k_nmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub data_seconds: f64,
    pub search_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub trace_csv: String,
    pub timing: Timing,
}

fn csv_of<T: Serialize>(rows: &[T], header: &[&str]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn top_rows(top: &TopK) -> Vec<TopRow> {
    top.entries()
        .iter()
        .map(|e| TopRow { sequence: e.sequence.clone(), expression: e.expression.clone(), nmse: e.fit.nmse })
        .collect()
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<RunOutput> {
    let bench = benchmark(&cfg.benchmark).map_err(|e| UsageError(e.to_string()))?;
    let grammar = cfg.grammar_for(&bench)?;
    let rules = if cfg.algorithm.uses_egg() {
        builtin_rules_named(&cfg.categories).map_err(|e| UsageError(e.to_string()))?
    } else {
        Vec::new()
    };

    let started = Instant::now();
    let data = bench.dataset(cfg.n_points, cfg.noise, cfg.seed)?;
    let data_seconds = started.elapsed().as_secs_f64();
    let started = Instant::now();

    let (best, top, iterations_run, trace_csv) = match cfg.algorithm {
        Algorithm::Mcts | Algorithm::EggMcts => {
            let mcts = eggsr::mcts::MctsConfig { egg: cfg.algorithm.uses_egg(), seed: cfg.seed, ..cfg.mcts.clone() };
            let r = run_mcts(&mcts, &grammar, &data, &rules);
            let best = r.best_fit.nmse.is_finite().then(|| (r.best_sequence.to_string(), r.best_expr.to_string(), r.best_fit.clone()));
            let csv = csv_of(&r.trace, &["iteration", "tree_nodes", "best_nmse", "updated_paths"])?;
            (best, r.top, r.trace.len(), csv)
        }
        Algorithm::Drl | Algorithm::EggDrl => {
            let estimator = if cfg.algorithm.uses_egg() { EstimatorKind::Egg } else { EstimatorKind::Standard };
            let drl = eggsr::drl::TrainConfig { estimator, seed: cfg.seed, ..cfg.drl.clone() };
            let mut policy = Policy::new(grammar, cfg.max_len);
            let r = train(&mut policy, &drl, &data, &rules);
            let best = match (&r.best_sequence, &r.best_expr, &r.best_fit) {
                (Some(s), Some(e), Some(f)) => Some((s.to_string(), e.to_string(), f.clone())),
                _ => None,
            };
            let csv = csv_of(
                &r.trace,
                &["iteration", "mean_reward", "best_nmse", "estimator_mean", "estimator_std", "mean_k_used"],
            )?;
            (best, r.top, r.trace.len(), csv)
        }
    };
    let search_seconds = started.elapsed().as_secs_f64();

    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        benchmark: bench.name.clone(),
        truth: bench.truth()?.to_string(),
        algorithm: cfg.algorithm.name().into(),
        seed: cfg.seed,
        noise: cfg.noise,
        n_points: cfg.n_points,
        iterations_run,
        best: best.map(|(sequence, expression, f)| Best {
            sequence,
            expression,
            coefficients: f.coefficients,
            nmse: f.nmse,
            mse: f.mse,
            rmse: f.rmse,
            nrmse: f.nrmse,
        }),
        top_k: top_rows(&top),
        median_top_k_nmse: top.median_nmse(),
    };
    Ok(RunOutput { summary, trace_csv, timing: Timing { data_seconds, search_seconds } })
}

impl RunOutput {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }

    /// Writes `summary.json`, `trace.csv` and `timing.json` into `dir`,
    /// replacing earlier files of the same name.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        std::fs::write(dir.join("trace.csv"), &self.trace_csv)?;
        std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&self.timing)? + "\n")?;
        Ok(())
    }
}
