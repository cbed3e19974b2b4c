//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use eggsr::dataopt::Benchmark;
use eggsr::drl::TrainConfig;
use eggsr::mcts::MctsConfig;
use eggsr::{Grammar, Op};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mcts,
    EggMcts,
    Drl,
    EggDrl,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mcts => "mcts",
            Algorithm::EggMcts => "egg-mcts",
            Algorithm::Drl => "drl",
            Algorithm::EggDrl => "egg-drl",
        }
    }

    pub fn uses_egg(self) -> bool {
        matches!(self, Algorithm::EggMcts | Algorithm::EggDrl)
    }
}

/// Everything one `run` needs. Module sections keep their own defaults, so
/// a file only lists what it changes:
///
/// ```toml
/// benchmark = "lin-log"
/// algorithm = "egg-mcts"
/// seed = 3
///
/// [mcts]
/// iterations = 100
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub noise: f64,
    pub n_points: usize,
    /// Rewrite categories used by the egg variants.
    pub categories: Vec<String>,
    /// Production rules, one per line. Empty means the default operator set
    /// over the benchmark's variables plus `const`.
    pub grammar: String,
    /// Longest sequence the policy may sample.
    pub max_len: usize,
    pub out: Option<PathBuf>,
    pub mcts: MctsConfig,
    pub drl: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            benchmark: "lin-log".into(),
            algorithm: Algorithm::Mcts,
            seed: 0,
            noise: 0.0,
            n_points: 2048,
            categories: vec!["commutative".into(), "associative".into(), "distributive".into(), "log-exp".into()],
            grammar: String::new(),
            max_len: 20,
            out: None,
            mcts: MctsConfig::default(),
            drl: TrainConfig::default(),
        }
    }
}

pub const DEFAULT_OPERATORS: [Op; 8] = [Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Log, Op::Exp, Op::Sin, Op::Cos];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, UsageError> {
        toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn grammar_for(&self, bench: &Benchmark) -> Result<Grammar, UsageError> {
        let g = if self.grammar.trim().is_empty() {
            Grammar::with_operators(&DEFAULT_OPERATORS, bench.n_vars, true)
        } else {
            Grammar::parse(&self.grammar)
        };
        g.map_err(|e| UsageError(format!("invalid grammar: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml("algorithm = \"egg-drl\"\n[drl]\nbatch = 64\n").unwrap();
        assert_eq!(cfg.algorithm, Algorithm::EggDrl);
        assert_eq!(cfg.drl.batch, 64);
        assert_eq!(cfg.drl.iterations, 200);
        assert_eq!(cfg.mcts, MctsConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("benchmrk = \"x\"").is_err());
        assert!(RunConfig::from_toml("algorithm = \"ga\"").is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap(), cfg);
    }
}
