//! Policy-gradient estimators.
//!
//! The standard estimator is the usual score-function average
//! `(1/N) Σ (r_i − b) ∇log p(τ_i)`. The egg estimator replaces `log p(τ_i)`
//! with the log of the total probability of the sequences found equivalent to
//! `τ_i`; its gradient is the probability-weighted mixture of the members'
//! score functions.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::Policy;
use crate::dataopt::fnv1a;
use crate::egraph::{equality_saturation, Limits};
use crate::grammar::RuleSequence;
use crate::rewrite::RewriteRule;

/// Reward baseline subtracted from each sample's reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "q")]
pub enum BaselineMode {
    None,
    Mean,
    /// The `1 − q` quantile of the batch rewards, so `q = 0.25` keeps the
    /// top quarter above the baseline.
    TopQuantile(f64),
}

impl Default for BaselineMode {
    fn default() -> Self {
        BaselineMode::top_quarter()
    }
}

impl BaselineMode {
    pub fn top_quarter() -> Self {
        BaselineMode::TopQuantile(0.25)
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn baseline(rewards: &[f64], mode: BaselineMode) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    match mode {
        BaselineMode::None => 0.0,
        BaselineMode::Mean => rewards.iter().sum::<f64>() / rewards.len() as f64,
        BaselineMode::TopQuantile(q) => quantile(rewards, 1.0 - q),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seq: RuleSequence,
    pub indices: Vec<usize>,
    pub logp: f64,
    pub reward: f64,
    pub effective_len: usize,
}

impl Trajectory {
    pub fn new(policy: &Policy, indices: Vec<usize>, logp: f64, reward: f64) -> Self {
        Trajectory {
            seq: policy.to_sequence(&indices),
            effective_len: indices.len(),
            indices,
            logp,
            reward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Standard,
    Egg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub vector: Vec<f64>,
    pub kind: EstimatorKind,
    /// Mean number of equivalents per sample (1 for the standard estimator).
    pub k_used: f64,
    pub baseline: f64,
}

/// How the members of an equivalence set are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `w_k = p_k / Σ p_j`, the exact gradient of the log total probability.
    #[default]
    Probability,
    /// Every member gets weight 1. This is a deliberately wrong estimator
    /// kept as a mutation check for the verification battery.
    Unweighted,
}

pub fn standard_gradient(policy: &Policy, batch: &[Trajectory], mode: BaselineMode) -> GradEstimate {
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let b = baseline(&rewards, mode);
    let mut vector = vec![0.0; policy.dim()];
    for t in batch {
        policy.accumulate_grad_logp(&t.indices, t.reward - b, &mut vector);
    }
    let n = batch.len().max(1) as f64;
    vector.iter_mut().for_each(|v| *v /= n);
    GradEstimate { vector, kind: EstimatorKind::Standard, k_used: 1.0, baseline: b }
}

/// Mixture weights `p_k / Σ p_j`, computed from log probabilities.
pub fn mixture_weights(logps: &[f64]) -> Vec<f64> {
    let max = logps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logps.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `log Σ_k p_k` for a set of equivalents.
pub fn log_total(logps: &[f64]) -> f64 {
    let max = logps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logps.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// `equivalents[i]` lists the index sequences equivalent to `batch[i]`,
/// the trajectory itself first.
pub fn egg_gradient(
    policy: &Policy,
    batch: &[Trajectory],
    equivalents: &[Vec<Vec<usize>>],
    mode: BaselineMode,
    weighting: Weighting,
) -> GradEstimate {
    assert_eq!(batch.len(), equivalents.len(), "one equivalence set per trajectory");
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let b = baseline(&rewards, mode);
    let mut vector = vec![0.0; policy.dim()];
    let mut k_total = 0usize;
    for (t, set) in batch.iter().zip(equivalents) {
        k_total += set.len();
        let weights = match weighting {
            Weighting::Probability if set.len() == 1 => vec![1.0],
            Weighting::Probability => {
                let logps: Vec<f64> =
                    set.iter().map(|s| policy.score_indices(s).unwrap_or(f64::NEG_INFINITY)).collect();
                mixture_weights(&logps)
            }
            Weighting::Unweighted => vec![1.0; set.len()],
        };
        for (s, w) in set.iter().zip(weights) {
            policy.accumulate_grad_logp(s, (t.reward - b) * w, &mut vector);
        }
    }
    let n = batch.len().max(1) as f64;
    vector.iter_mut().for_each(|v| *v /= n);
    GradEstimate {
        vector,
        kind: EstimatorKind::Egg,
        k_used: k_total as f64 / n,
        baseline: b,
    }
}

/// Up to `k` sequences equivalent to `seq` under `rules`, `seq` first.
/// Candidates come from random-walk extraction on the saturated e-graph;
/// any the policy cannot produce (unknown rule, too long) are dropped. The
/// walk is seeded from `seed` and the sequence text, so results do not
/// depend on call order.
pub fn egg_equivalents(
    seq: &RuleSequence,
    rules: &[RewriteRule],
    k: usize,
    limits: &Limits,
    policy: &Policy,
    seed: u64,
) -> Vec<RuleSequence> {
    let mut out = vec![seq.clone()];
    if k <= 1 || rules.is_empty() {
        return out;
    }
    let expr = seq.to_expression().expr;
    let (g, _) = equality_saturation(&expr, rules, limits);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(seq.to_string().as_bytes()));
    let Ok(found) = g.extract_random_walk(&mut rng, k, policy.max_len()) else {
        return out;
    };
    for s in found {
        if out.len() >= k {
            break;
        }
        if !out.contains(&s) && policy.score_sequence(&s).is_ok() {
            out.push(s);
        }
    }
    out
}

/// Memoized [`egg_equivalents`] over rule-index sequences.
#[derive(Debug, Clone)]
pub struct EquivalenceCache {
    rules: Vec<RewriteRule>,
    k: usize,
    limits: Limits,
    seed: u64,
    map: HashMap<Vec<usize>, Vec<Vec<usize>>>,
}

impl EquivalenceCache {
    pub fn new(rules: Vec<RewriteRule>, k: usize, limits: Limits, seed: u64) -> Self {
        EquivalenceCache { rules, k, limits, seed, map: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn compute(&self, policy: &Policy, indices: &[usize]) -> Vec<Vec<usize>> {
        let seq = policy.to_sequence(indices);
        egg_equivalents(&seq, &self.rules, self.k, &self.limits, policy, self.seed)
            .iter()
            .map(|s| policy.indices(s).expect("equivalents are filtered to the vocabulary"))
            .collect()
    }

    /// Equivalence sets for every trajectory in `batch`, computing missing
    /// entries in parallel.
    pub fn sets(&mut self, policy: &Policy, batch: &[Trajectory]) -> Vec<Vec<Vec<usize>>> {
        let mut missing: Vec<&Vec<usize>> =
            batch.iter().map(|t| &t.indices).filter(|s| !self.map.contains_key(*s)).collect();
        missing.sort();
        missing.dedup();
        let fresh: Vec<(Vec<usize>, Vec<Vec<usize>>)> = missing
            .par_iter()
            .map(|s| ((*s).clone(), self.compute(policy, s)))
            .collect();
        self.map.extend(fresh);
        batch.iter().map(|t| self.map[&t.indices].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Grammar;
    use crate::rewrite::{builtin_rules, Category};
    use rand::Rng;

    fn policy() -> Policy {
        let g = Grammar::parse("A->(A+A)\nA->log(A)\nA->x1\nA->x2").unwrap();
        let mut p = Policy::new(g, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in p.theta_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        p
    }

    fn batch(p: &Policy, n: usize, seed: u64) -> Vec<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (s, l) = p.sample(&mut rng);
                let r = rng.random::<f64>();
                Trajectory::new(p, s, l, r)
            })
            .collect()
    }

    #[test]
    fn baselines() {
        let r = [0.1, 0.4, 0.2, 0.3, 0.9];
        assert_eq!(baseline(&r, BaselineMode::None), 0.0);
        assert!((baseline(&r, BaselineMode::Mean) - 0.38).abs() < 1e-12);
        // sorted: .1 .2 .3 .4 .9; position 0.75*4 = 3 → 0.4
        assert!((baseline(&r, BaselineMode::top_quarter()) - 0.4).abs() < 1e-12);
        assert!((quantile(&[0.0, 1.0], 0.75) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn centered_single_sample_is_zero() {
        let p = policy();
        let b = batch(&p, 1, 1);
        let g = standard_gradient(&p, &b, BaselineMode::Mean);
        assert!(g.vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn k1_matches_standard_bitwise() {
        let p = policy();
        let b = batch(&p, 50, 2);
        let sets: Vec<_> = b.iter().map(|t| vec![t.indices.clone()]).collect();
        for mode in [BaselineMode::None, BaselineMode::Mean, BaselineMode::top_quarter()] {
            let s = standard_gradient(&p, &b, mode);
            let e = egg_gradient(&p, &b, &sets, mode, Weighting::Probability);
            assert_eq!(s.vector, e.vector);
            assert_eq!(s.baseline, e.baseline);
            assert_eq!(e.k_used, 1.0);
        }
    }

    #[test]
    fn equivalents_of_log_product() {
        let g = Grammar::parse("A->(A+A)\nA->A*A\nA->log(A)\nA->x1\nA->x2").unwrap();
        let p = Policy::new(g, 8);
        let rules = builtin_rules(&[Category::LogExp]).unwrap();
        let seq: RuleSequence = "A->log(A), A->A*A, A->x1, A->x2".parse().unwrap();
        let eq = egg_equivalents(&seq, &rules, 4, &Limits::default(), &p, 0);
        assert_eq!(eq.len(), 2);
        assert_eq!(eq[0], seq);
        assert_eq!(eq[1].to_string(), "A->(A+A), A->log(A), A->x1, A->log(A), A->x2");
        assert_eq!(egg_equivalents(&seq, &rules, 1, &Limits::default(), &p, 0), vec![seq.clone()]);
        assert_eq!(egg_equivalents(&seq, &[], 4, &Limits::default(), &p, 0), vec![seq]);
    }

    #[test]
    fn over_length_equivalents_are_dropped() {
        let g = Grammar::parse("A->(A+A)\nA->A*A\nA->log(A)\nA->x1\nA->x2").unwrap();
        let p = Policy::new(g, 4);
        let rules = builtin_rules(&[Category::LogExp]).unwrap();
        let seq: RuleSequence = "A->log(A), A->A*A, A->x1, A->x2".parse().unwrap();
        let eq = egg_equivalents(&seq, &rules, 4, &Limits::default(), &p, 0);
        assert_eq!(eq, vec![seq]);
    }

    #[test]
    fn mixture_weights_normalize() {
        let w = mixture_weights(&[-1.0, -2.0, -700.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((log_total(&[0.5f64.ln(), 0.25f64.ln()]) - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cache_is_deterministic() {
        let p = policy();
        let b = batch(&p, 40, 4);
        let rules = builtin_rules(&[Category::Commutative]).unwrap();
        let mut c1 = EquivalenceCache::new(rules.clone(), 4, Limits::default(), 7);
        let mut c2 = EquivalenceCache::new(rules, 4, Limits::default(), 7);
        let s1 = c1.sets(&p, &b);
        let mut rev = b.clone();
        rev.reverse();
        let mut s2 = c2.sets(&p, &rev);
        s2.reverse();
        assert_eq!(s1, s2);
        for (t, s) in b.iter().zip(&s1) {
            assert_eq!(s[0], t.indices);
        }
    }
}
