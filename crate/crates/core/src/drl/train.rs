//! Policy-gradient training with Adam and a decaying entropy bonus.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::estimator::{
    egg_gradient, log_total, standard_gradient, BaselineMode, EquivalenceCache, EstimatorKind, Trajectory,
    Weighting,
};
use super::policy::Policy;
use crate::dataopt::{Dataset, FitConfig, FitResult, Fitter, TopK};
use crate::egraph::Limits;
use crate::grammar::{Expr, RuleSequence};
use crate::rewrite::RewriteRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub entropy_weight: f64,
    pub entropy_gamma: f64,
    pub estimator: EstimatorKind,
    pub baseline: BaselineMode,
    pub weighting: Weighting,
    /// Equivalents extracted per sample for the egg estimator.
    pub egg_samples: usize,
    pub limits: Limits,
    pub seed: u64,
    pub fit: FitConfig,
    pub top_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 200,
            batch: 1024,
            lr: 0.009,
            entropy_weight: 0.03,
            entropy_gamma: 0.7,
            estimator: EstimatorKind::Standard,
            baseline: BaselineMode::default(),
            weighting: Weighting::Probability,
            egg_samples: 8,
            limits: Limits { max_iter: 5, max_nodes: 2_000 },
            seed: 0,
            fit: FitConfig::default(),
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTraceRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub best_nmse: f64,
    /// Mean and standard deviation over the batch of `R(τ)·log p(τ)`, with
    /// `log p` replaced by the log total probability of the equivalence set
    /// for the egg estimator.
    pub estimator_mean: f64,
    pub estimator_std: f64,
    pub mean_k_used: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best_sequence: Option<RuleSequence>,
    pub best_expr: Option<Expr>,
    pub best_fit: Option<FitResult>,
    pub top: TopK,
    pub trace: Vec<TrainTraceRow>,
}

/// Adam state for gradient ascent.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Adam { m: vec![0.0; dim], v: vec![0.0; dim], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Moves `theta` uphill along `grad`.
    pub fn ascend(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            theta[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn train(policy: &mut Policy, cfg: &TrainConfig, data: &Dataset, rules: &[RewriteRule]) -> TrainResult {
    let fitter = Fitter::new(data, cfg.fit);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache = EquivalenceCache::new(rules.to_vec(), cfg.egg_samples, cfg.limits, cfg.seed);
    let mut adam = Adam::new(policy.dim());
    let mut top = TopK::new(cfg.top_k);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let samples: Vec<(Vec<usize>, f64)> = (0..cfg.batch).map(|_| policy.sample(&mut rng)).collect();
        let exprs: Vec<Expr> =
            samples.iter().map(|(s, _)| policy.to_sequence(s).to_expression().expr).collect();
        let fits = fitter.fit_batch(&exprs);
        let mut batch = Vec::with_capacity(samples.len());
        for ((s, logp), (expr, fit)) in samples.into_iter().zip(exprs.iter().zip(&fits)) {
            top.offer(expr, fit);
            batch.push(Trajectory::new(policy, s, logp, fit.reward()));
        }

        let (mut grad, quantity, k_used) = match cfg.estimator {
            EstimatorKind::Standard => {
                let g = standard_gradient(policy, &batch, cfg.baseline);
                let q: Vec<f64> = batch.iter().map(|t| t.reward * t.logp).collect();
                (g.vector, q, 1.0)
            }
            EstimatorKind::Egg => {
                let sets = cache.sets(policy, &batch);
                let g = egg_gradient(policy, &batch, &sets, cfg.baseline, cfg.weighting);
                let q: Vec<f64> = batch
                    .iter()
                    .zip(&sets)
                    .map(|(t, set)| {
                        let logps: Vec<f64> = set.iter().map(|s| policy.score_indices(s).unwrap()).collect();
                        t.reward * log_total(&logps)
                    })
                    .collect();
                (g.vector, q, g.k_used)
            }
        };
        if cfg.entropy_weight != 0.0 {
            let scale = 1.0 / batch.len().max(1) as f64;
            for t in &batch {
                policy.accumulate_entropy_grad(&t.indices, cfg.entropy_weight, cfg.entropy_gamma, scale, &mut grad);
            }
        }
        if cfg.lr != 0.0 {
            adam.ascend(policy.theta_mut(), &grad, cfg.lr);
        }

        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let (estimator_mean, estimator_std) = mean_std(&quantity);
        trace.push(TrainTraceRow {
            iteration,
            mean_reward: mean_std(&rewards).0,
            best_nmse: top.best().map_or(f64::INFINITY, |b| b.fit.nmse),
            estimator_mean,
            estimator_std,
            mean_k_used: k_used,
        });
    }

    let best = top.best().cloned();
    let best_sequence: Option<RuleSequence> = best.as_ref().and_then(|b| b.sequence.parse().ok());
    TrainResult {
        best_expr: best_sequence.as_ref().map(|s| s.to_expression().expr),
        best_sequence,
        best_fit: best.map(|b| b.fit),
        top,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataopt::data_oracle;
    use crate::grammar::Grammar;

    fn setup() -> (Policy, Dataset) {
        let g = Grammar::parse("A->(A+A)\nA->log(A)\nA->x1\nA->x2").unwrap();
        let truth = Expr::parse_sequence("A->(A+A), A->log(A), A->x1, A->x2").unwrap();
        let data = data_oracle(&truth, &[], 128, &[(0.1, 4.0); 2], 0.0, 1).unwrap();
        (Policy::new(g, 4), data)
    }

    #[test]
    fn zero_lr_leaves_theta() {
        let (mut p, data) = setup();
        let cfg = TrainConfig { iterations: 5, batch: 16, lr: 0.0, entropy_weight: 0.0, ..Default::default() };
        let before = p.theta().to_vec();
        let r = train(&mut p, &cfg, &data, &[]);
        assert_eq!(p.theta(), before.as_slice());
        assert_eq!(r.trace.len(), 5);
    }

    #[test]
    fn finds_truth_on_tiny_grammar() {
        let (mut p, data) = setup();
        let cfg = TrainConfig { iterations: 20, batch: 64, lr: 0.05, ..Default::default() };
        let r = train(&mut p, &cfg, &data, &[]);
        assert!(r.best_fit.unwrap().nmse < 1e-12);
        let first = r.trace.first().unwrap().mean_reward;
        let last = r.trace.last().unwrap().mean_reward;
        assert!(last > first, "{first} -> {last}");
    }

    #[test]
    fn training_is_seeded() {
        let (p, data) = setup();
        let rules = crate::rewrite::builtin_rules(&[crate::rewrite::Category::Commutative]).unwrap();
        let cfg = TrainConfig {
            iterations: 4,
            batch: 32,
            estimator: EstimatorKind::Egg,
            ..Default::default()
        };
        let mut a = p.clone();
        let mut b = p;
        let ra = train(&mut a, &cfg, &data, &rules);
        let rb = train(&mut b, &cfg, &data, &rules);
        assert_eq!(ra.trace, rb.trace);
        assert_eq!(a.theta(), b.theta());
        assert!(ra.trace.iter().any(|r| r.mean_k_used > 1.0));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut adam = Adam::new(2);
        let mut theta = vec![0.0, 0.0];
        adam.ascend(&mut theta, &[3.0, -0.5], 0.1);
        assert!((theta[0] - 0.1).abs() < 1e-6);
        assert!((theta[1] + 0.1).abs() < 1e-6);
    }
}
