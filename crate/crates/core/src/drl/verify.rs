//! The estimator verification battery: exact identities by enumeration and
//! Monte Carlo checks of unbiasedness and variance reduction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::estimator::{egg_equivalents, Weighting};
use super::oracle::{dual_log_class_grad, Enumeration, OracleError};
use super::policy::Policy;
use crate::dataopt::{data_oracle, reward, DataError, DEFAULT_RANGE};
use crate::egraph::Limits;
use crate::grammar::{Expr, Grammar, GrammarError, Op};
use crate::rewrite::{builtin_rules_named, RewriteError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub grammar: String,
    pub max_len: usize,
    pub truth: String,
    /// Rewrite categories by name, e.g. `commutative`.
    pub categories: Vec<String>,
    pub draws: usize,
    /// Logits are drawn uniformly from `[-theta_scale, theta_scale]`.
    pub theta_scale: f64,
    /// Extracted equivalents per sample; large enough to cover every class
    /// on the default grammar.
    pub egg_samples: usize,
    pub weighting: Weighting,
    pub n_points: usize,
    pub seed: u64,
    /// Standard errors allowed between a Monte Carlo mean and the exact value.
    pub se_bound: f64,
    /// Slack on the covariance-trace comparison.
    pub variance_slack: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            grammar: "A->(A+A)\nA->log(A)\nA->x1\nA->x2".into(),
            max_len: 4,
            truth: "A->(A+A), A->log(A), A->x1, A->x2".into(),
            categories: vec!["commutative".into()],
            draws: 100_000,
            theta_scale: 1.0,
            egg_samples: 16,
            weighting: Weighting::Probability,
            n_points: 256,
            seed: 0,
            se_bound: 4.0,
            variance_slack: 0.05,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub sequences: usize,
    pub classes: usize,
    pub full_class_extraction: bool,
    /// Largest `|mean − ∇J| / SE` over components.
    pub standard_max_z: f64,
    pub egg_max_z: f64,
    pub standard_trace: f64,
    pub egg_trace: f64,
    pub exact_standard_trace: f64,
    pub exact_egg_trace: f64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Running per-component mean and variance.
struct Moments {
    n: f64,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments { n: 0.0, sum: vec![0.0; dim], sq: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sq).zip(x) {
            *s += v;
            *q += v * v;
        }
    }

    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.n).collect()
    }

    /// Unbiased sample variance per component.
    fn var(&self) -> Vec<f64> {
        self.sum
            .iter()
            .zip(&self.sq)
            .map(|(s, q)| ((q - s * s / self.n) / (self.n - 1.0)).max(0.0))
            .collect()
    }

    /// Largest standardized deviation from `target`. Components with zero
    /// sample variance must match to 1e-12.
    fn max_z(&self, target: &[f64]) -> f64 {
        let mean = self.mean();
        let var = self.var();
        (0..target.len())
            .map(|i| {
                let diff = (mean[i] - target[i]).abs();
                let se = (var[i] / self.n).sqrt();
                if se == 0.0 {
                    if diff < 1e-12 { 0.0 } else { f64::INFINITY }
                } else {
                    diff / se
                }
            })
            .fold(0.0, f64::max)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn verify_estimators(cfg: &VerifyConfig) -> Result<VerifyReport, VerifyError> {
    let grammar = Grammar::parse(&cfg.grammar)?;
    let truth = Expr::parse_sequence(&cfg.truth)?;
    let n_vars = truth
        .preorder()
        .iter()
        .filter_map(|e| match e.op() {
            Op::Var(i) => Some(i as usize),
            _ => None,
        })
        .max()
        .unwrap_or(1);
    let data = data_oracle(&truth, &[], cfg.n_points, &vec![DEFAULT_RANGE; n_vars], 0.0, cfg.seed)?;
    let rules = builtin_rules_named(&cfg.categories)?;
    let limits = Limits::default();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = Policy::new(grammar, cfg.max_len);
    for v in policy.theta_mut() {
        *v = rng.random_range(-cfg.theta_scale..=cfg.theta_scale);
    }

    let reward_of = |s: &[usize]| {
        let expr = policy.to_sequence(s).to_expression().expr;
        reward(&expr, &[], &data)
    };
    let en = Enumeration::new(&policy, &rules, &limits, reward_of)?;
    let members = en.members();
    let mut checks = Vec::new();

    let zero = en.mean_score(&policy);
    let zero_err = zero.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    checks.push(Check {
        name: "score-function-zero-mean".into(),
        passed: zero_err < 1e-10,
        detail: format!("max |E grad log p| = {zero_err:.3e}"),
    });

    let analytic = en.class_mean_scores(&policy);
    let mut key_err = 0.0f64;
    for (c, m) in members.iter().enumerate() {
        let seqs: Vec<&[usize]> = m.iter().map(|&i| en.sequences[i].as_slice()).collect();
        key_err = key_err.max(max_abs_diff(&analytic[c], &dual_log_class_grad(&policy, &seqs)));
    }
    checks.push(Check {
        name: "key-identity".into(),
        passed: key_err < 1e-10,
        detail: format!("max deviation = {key_err:.3e} over {} classes", members.len()),
    });

    // Equivalents come from the production extraction path; the battery
    // needs them to cover each class exactly.
    let extracted: Vec<Vec<Vec<usize>>> = en
        .sequences
        .iter()
        .map(|s| {
            egg_equivalents(&policy.to_sequence(s), &rules, cfg.egg_samples, &limits, &policy, cfg.seed)
                .iter()
                .map(|e| policy.indices(e).unwrap())
                .collect()
        })
        .collect();
    let full = en.full_class_sets();
    let full_class = extracted.iter().zip(&full).all(|(a, b)| {
        let mut a = a.clone();
        let mut b = b.clone();
        a.sort();
        b.sort();
        a == b
    });
    checks.push(Check {
        name: "full-class-extraction".into(),
        passed: full_class,
        detail: format!("{} sequences, {} classes", en.sequences.len(), members.len()),
    });

    let exact = en.gradient(&policy);
    let std_values = en.estimator_values(&policy, None, cfg.weighting);
    let egg_values = en.estimator_values(&policy, Some(&extracted), cfg.weighting);
    let (_, exact_standard_trace) = en.moments(&std_values);
    let (_, exact_egg_trace) = en.moments(&egg_values);

    let mut std_m = Moments::new(policy.dim());
    let mut egg_m = Moments::new(policy.dim());
    let mut draw_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    for _ in 0..cfg.draws {
        let (s, _) = policy.sample(&mut draw_rng);
        let i = en.sequences.binary_search(&s).expect("enumeration is in sampling order");
        std_m.push(&std_values[i]);
        egg_m.push(&egg_values[i]);
    }
    let standard_max_z = std_m.max_z(&exact);
    let egg_max_z = egg_m.max_z(&exact);
    checks.push(Check {
        name: "standard-unbiased".into(),
        passed: standard_max_z <= cfg.se_bound,
        detail: format!("max |mean - grad J| / SE = {standard_max_z:.3} over {} draws", cfg.draws),
    });
    checks.push(Check {
        name: "egg-unbiased".into(),
        passed: egg_max_z <= cfg.se_bound,
        detail: format!("max |mean - grad J| / SE = {egg_max_z:.3} over {} draws", cfg.draws),
    });
    let standard_trace: f64 = std_m.var().iter().sum();
    let egg_trace: f64 = egg_m.var().iter().sum();
    checks.push(Check {
        name: "variance-reduction".into(),
        passed: egg_trace <= (1.0 + cfg.variance_slack) * standard_trace,
        detail: format!(
            "tr Cov egg = {egg_trace:.6}, standard = {standard_trace:.6} (exact {exact_egg_trace:.6} vs {exact_standard_trace:.6})"
        ),
    });

    Ok(VerifyReport {
        seed: cfg.seed,
        sequences: en.sequences.len(),
        classes: members.len(),
        full_class_extraction: full_class,
        standard_max_z,
        egg_max_z,
        standard_trace,
        egg_trace,
        exact_standard_trace,
        exact_egg_trace,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_battery_passes() {
        let r = verify_estimators(&VerifyConfig { draws: 20_000, ..Default::default() }).unwrap();
        assert_eq!(r.sequences, 24);
        assert!(r.passed(), "{:#?}", r.checks);
        assert!(r.exact_egg_trace <= r.exact_standard_trace);
    }

    #[test]
    fn dropping_weights_is_caught() {
        let cfg = VerifyConfig { draws: 20_000, weighting: Weighting::Unweighted, ..Default::default() };
        let r = verify_estimators(&cfg).unwrap();
        assert!(!r.passed());
        let failed: Vec<_> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert!(failed.contains(&"egg-unbiased"), "{failed:?}");
    }
}
