//! Exact quantities by enumerating every sequence the policy can emit.
//!
//! Only usable on tiny grammars, which is the point: these values are the
//! ground truth the Monte Carlo estimators are checked against.

use thiserror::Error;

use super::estimator::{mixture_weights, Weighting};
use super::policy::{Policy, Step};
use crate::egraph::{check_equivalent, Limits};
use crate::rewrite::RewriteRule;

pub const ENUMERATION_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("more than {0} sequences; grammar is not enumerable")]
    Budget(usize),
}

/// Every complete sequence with nonzero probability, depth-first in rule
/// order.
pub fn enumerate_sequences(policy: &Policy, limit: usize) -> Result<Vec<Vec<usize>>, OracleError> {
    fn go(
        policy: &Policy,
        step: Step,
        prefix: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        limit: usize,
    ) -> Result<(), OracleError> {
        if step.open == 0 {
            if out.len() >= limit {
                return Err(OracleError::Budget(limit));
            }
            out.push(prefix.clone());
            return Ok(());
        }
        for a in 0..policy.n_rules() {
            if policy.allowed(step, a) {
                prefix.push(a);
                go(policy, policy.next(step, a), prefix, out, limit)?;
                prefix.pop();
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    go(policy, Policy::start(), &mut Vec::new(), &mut out, limit)?;
    Ok(out)
}

/// Class label per sequence; labels number classes by first occurrence.
pub fn partition_classes(
    policy: &Policy,
    seqs: &[Vec<usize>],
    rules: &[RewriteRule],
    limits: &Limits,
) -> Vec<usize> {
    let exprs: Vec<_> = seqs.iter().map(|s| policy.to_sequence(s).to_expression().expr).collect();
    let mut labels: Vec<usize> = Vec::with_capacity(seqs.len());
    let mut reps: Vec<usize> = Vec::new();
    for (i, e) in exprs.iter().enumerate() {
        let label = reps.iter().position(|&r| check_equivalent(&exprs[r], e, rules, limits));
        match label {
            Some(c) => labels.push(c),
            None => {
                labels.push(reps.len());
                reps.push(i);
            }
        }
    }
    labels
}

/// Members of each class, by sequence position.
pub fn class_members(labels: &[usize]) -> Vec<Vec<usize>> {
    let n = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); n];
    for (i, &c) in labels.iter().enumerate() {
        out[c].push(i);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub sequences: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub classes: Vec<usize>,
}

impl Enumeration {
    pub fn new(
        policy: &Policy,
        rules: &[RewriteRule],
        limits: &Limits,
        reward: impl Fn(&[usize]) -> f64,
    ) -> Result<Self, OracleError> {
        let sequences = enumerate_sequences(policy, ENUMERATION_LIMIT)?;
        let probs = sequences.iter().map(|s| policy.score_indices(s).unwrap().exp()).collect();
        let rewards = sequences.iter().map(|s| reward(s)).collect();
        let classes = partition_classes(policy, &sequences, rules, limits);
        Ok(Enumeration { sequences, probs, rewards, classes })
    }

    /// Re-prices the sequences under another parameter vector.
    pub fn reprice(&mut self, policy: &Policy) {
        self.probs = self.sequences.iter().map(|s| policy.score_indices(s).unwrap().exp()).collect();
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        class_members(&self.classes)
    }

    /// `J(θ) = Σ p(τ) r(τ)`.
    pub fn objective(&self) -> f64 {
        self.probs.iter().zip(&self.rewards).map(|(p, r)| p * r).sum()
    }

    /// `∇J(θ) = Σ p(τ) r(τ) ∇log p(τ)`.
    pub fn gradient(&self, policy: &Policy) -> Vec<f64> {
        let mut g = vec![0.0; policy.dim()];
        for ((s, p), r) in self.sequences.iter().zip(&self.probs).zip(&self.rewards) {
            policy.accumulate_grad_logp(s, p * r, &mut g);
        }
        g
    }

    /// `E[∇log p(τ)]`, which is zero for any policy.
    pub fn mean_score(&self, policy: &Policy) -> Vec<f64> {
        let mut g = vec![0.0; policy.dim()];
        for (s, p) in self.sequences.iter().zip(&self.probs) {
            policy.accumulate_grad_logp(s, *p, &mut g);
        }
        g
    }

    /// `q(φ) = Σ_{τ∈S_φ} p(τ)` per class.
    pub fn class_probs(&self) -> Vec<f64> {
        self.members().iter().map(|m| m.iter().map(|&i| self.probs[i]).sum()).collect()
    }

    /// Probability-weighted mean of `∇log p` within each class.
    pub fn class_mean_scores(&self, policy: &Policy) -> Vec<Vec<f64>> {
        let q = self.class_probs();
        self.members()
            .iter()
            .zip(q)
            .map(|(m, q)| {
                let mut g = vec![0.0; policy.dim()];
                for &i in m {
                    policy.accumulate_grad_logp(&self.sequences[i], self.probs[i] / q, &mut g);
                }
                g
            })
            .collect()
    }

    /// The full class of every sequence, the sequence itself first.
    pub fn full_class_sets(&self) -> Vec<Vec<Vec<usize>>> {
        let members = self.members();
        self.sequences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut set = vec![s.clone()];
                set.extend(
                    members[self.classes[i]].iter().filter(|&&j| j != i).map(|&j| self.sequences[j].clone()),
                );
                set
            })
            .collect()
    }

    /// Single-sample estimator value for each sequence (`b = 0`): the
    /// standard `r ∇log p` when `sets` is `None`, otherwise the egg form.
    pub fn estimator_values(
        &self,
        policy: &Policy,
        sets: Option<&[Vec<Vec<usize>>]>,
        weighting: Weighting,
    ) -> Vec<Vec<f64>> {
        self.sequences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut g = vec![0.0; policy.dim()];
                let r = self.rewards[i];
                match sets {
                    None => policy.accumulate_grad_logp(s, r, &mut g),
                    Some(sets) => {
                        let set = &sets[i];
                        let w = match weighting {
                            Weighting::Probability => mixture_weights(
                                &set.iter().map(|m| policy.score_indices(m).unwrap()).collect::<Vec<_>>(),
                            ),
                            Weighting::Unweighted => vec![1.0; set.len()],
                        };
                        for (m, w) in set.iter().zip(w) {
                            policy.accumulate_grad_logp(m, r * w, &mut g);
                        }
                    }
                }
                g
            })
            .collect()
    }

    /// Exact mean and covariance trace of a per-sequence estimator.
    pub fn moments(&self, values: &[Vec<f64>]) -> (Vec<f64>, f64) {
        let dim = values.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        let mut second = 0.0;
        for (v, p) in values.iter().zip(&self.probs) {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += p * x;
            }
            second += p * v.iter().map(|x| x * x).sum::<f64>();
        }
        let trace = second - mean.iter().map(|m| m * m).sum::<f64>();
        (mean, trace)
    }
}

/// Forward-mode dual number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    fn exp(self) -> Dual {
        let e = self.v.exp();
        Dual { v: e, d: e * self.d }
    }
    fn ln(self) -> Dual {
        Dual { v: self.v.ln(), d: self.d / self.v }
    }
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
    fn div(self, o: Dual) -> Dual {
        Dual { v: self.v / o.v, d: (self.d * o.v - self.v * o.d) / (o.v * o.v) }
    }
}

/// `p(τ)` as a dual number with tangent `e_k` in parameter space, computed
/// straight from the logits without the analytic score function.
pub fn dual_prob(policy: &Policy, seq: &[usize], k: usize) -> Dual {
    let theta = policy.theta();
    let n = policy.n_rules();
    let mut step = Policy::start();
    let mut p = Dual { v: 1.0, d: 0.0 };
    for &a in seq {
        let row = policy.row(step.position, step.prev);
        let logit = |b: usize| Dual { v: theta[row + b], d: if row + b == k { 1.0 } else { 0.0 } };
        let mut z = Dual { v: 0.0, d: 0.0 };
        for b in 0..n {
            if policy.allowed(step, b) {
                z = z.add(logit(b).exp());
            }
        }
        p = p.mul(logit(a).exp().div(z));
        step = policy.next(step, a);
    }
    p
}

/// `∇log q(φ)` for a class given by its member sequences, by forward mode.
pub fn dual_log_class_grad(policy: &Policy, members: &[&[usize]]) -> Vec<f64> {
    (0..policy.dim())
        .map(|k| {
            let q = members
                .iter()
                .fold(Dual { v: 0.0, d: 0.0 }, |acc, s| acc.add(dual_prob(policy, s, k)));
            q.ln().d
        })
        .collect()
}
