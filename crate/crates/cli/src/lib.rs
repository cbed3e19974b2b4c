//! Library side of the `eggsr` command-line tool. Each subcommand is a
//! function here so tests can call it without spawning a process.

pub mod bench;
pub mod config;
pub mod run;

use std::collections::HashSet;
use std::path::Path;

use eggsr::dataopt::{benchmark, fit_coefficients, Dataset, FitConfig, FitResult};
use eggsr::egraph::{ast_size, equality_saturation};
use eggsr::rewrite::{all_builtin_rules, builtin_rules_named, parse_rules};
use eggsr::{Expr, Limits, RewriteRule, SaturationReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Bad input from the user: malformed expressions, rules, configs or
/// unknown names. The binary exits with status 2 on these.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const DEFAULT_RULES: &str = "commutative,associative,distributive,log-exp,trig";

pub fn parse_expr(seq: &str) -> Result<Expr, UsageError> {
    Expr::parse_sequence(seq).map_err(|e| UsageError(format!("invalid expression `{seq}`: {e}")))
}

/// A rule file in the rewrite DSL when `spec` names an existing file,
/// otherwise a comma-separated list of categories (`all` for everything).
pub fn resolve_rules(spec: &str) -> Result<Vec<RewriteRule>, UsageError> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        return parse_rules(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())));
    }
    if spec.trim() == "all" {
        return Ok(all_builtin_rules());
    }
    let names: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    builtin_rules_named(&names).map_err(|e| UsageError(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturateOutput {
    pub saturated: bool,
    pub iterations: usize,
    pub classes: usize,
    pub nodes: usize,
    #[serde(skip)]
    pub dot: String,
}

pub fn saturate(expr: &Expr, rules: &[RewriteRule], limits: &Limits) -> SaturateOutput {
    let (g, SaturationReport { iterations, saturated, nodes, classes }) = equality_saturation(expr, rules, limits);
    SaturateOutput { saturated, iterations, classes, nodes, dot: g.to_dot() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractMode {
    Cost,
    Walk,
}

impl std::str::FromStr for ExtractMode {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        match s {
            "cost" => Ok(ExtractMode::Cost),
            "walk" => Ok(ExtractMode::Walk),
            _ => Err(UsageError(format!("unknown extraction mode `{s}` (expected cost or walk)"))),
        }
    }
}

/// Rule sequences extracted from the saturated graph of `expr`. Walk mode
/// returns up to `k` terms that differ other than by regrouping `+` or `·`.
pub fn extract(
    expr: &Expr,
    rules: &[RewriteRule],
    limits: &Limits,
    mode: ExtractMode,
    k: usize,
    seed: u64,
) -> Result<Vec<String>, UsageError> {
    if k == 0 {
        return Err(UsageError("k must be at least 1".into()));
    }
    let (g, _) = equality_saturation(expr, rules, limits);
    match mode {
        ExtractMode::Cost => {
            let best = g.extract_cost(&ast_size).map_err(|e| UsageError(e.to_string()))?;
            Ok(vec![best.to_sequence().to_string()])
        }
        ExtractMode::Walk => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let depth = 2 * expr.size() + 2;
            // ask for more raw terms than needed; regroupings collapse below
            let terms = g.random_walk_exprs(&mut rng, k.saturating_mul(8), depth).map_err(|e| UsageError(e.to_string()))?;
            let mut seen = HashSet::new();
            Ok(terms
                .into_iter()
                .filter(|t| seen.insert(t.flatten_assoc()))
                .take(k)
                .map(|t| t.to_sequence().to_string())
                .collect())
        }
    }
}

/// A dataset from a benchmark name or from a CSV file whose last column is
/// the target. Header rows are skipped.
pub fn load_dataset(source: &str, n_points: usize, noise: f64, seed: u64) -> anyhow::Result<Dataset> {
    let path = Path::new(source);
    if !path.is_file() {
        let b = benchmark(source).map_err(|e| UsageError(e.to_string()))?;
        return Ok(b.dataset(n_points, noise, seed)?);
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record?;
        let values: Result<Vec<f64>, _> = record.iter().map(|v| v.trim().parse::<f64>()).collect();
        let Ok(mut values) = values else {
            if inputs.is_empty() {
                continue;
            }
            return Err(UsageError(format!("non-numeric row in {}", path.display())).into());
        };
        let y = values.pop().ok_or_else(|| UsageError("empty row".into()))?;
        inputs.push(values);
        targets.push(y);
    }
    Dataset::new(inputs, targets).map_err(|e| UsageError(e.to_string()).into())
}

pub fn fit(expr: &Expr, data: &Dataset, cfg: &FitConfig) -> Result<FitResult, UsageError> {
    fit_coefficients(expr, data, cfg).map_err(|e| UsageError(e.to_string()))
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_by_name_and_errors() {
        assert!(!resolve_rules("commutative").unwrap().is_empty());
        assert_eq!(resolve_rules("all").unwrap().len(), all_builtin_rules().len());
        assert!(resolve_rules("commutative,bogus").is_err());
    }

    #[test]
    fn cost_extraction_gives_one_line() {
        let e = parse_expr("A->(A+A), A->x1, A->x2").unwrap();
        let rules = resolve_rules("commutative").unwrap();
        let lines = extract(&e, &rules, &Limits::default(), ExtractMode::Cost, 5, 0).unwrap();
        assert_eq!(lines.len(), 1);
        assert!(extract(&e, &rules, &Limits::default(), ExtractMode::Walk, 0, 0).is_err());
    }
}
