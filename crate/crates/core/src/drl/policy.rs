//! Tabular autoregressive policy over production rules.
//!
//! Logits are indexed by the step position, the previous rule (or a start
//! marker) and the next rule. At each step only rules that still allow the
//! sequence to close within `max_len` are eligible, and the softmax runs over
//! that set. Every sample is therefore a complete sequence, and log
//! probabilities and their gradients are exact.

use rand::Rng;
use thiserror::Error;

use crate::grammar::{Grammar, RuleSequence};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("rule `{0}` is not in the policy vocabulary")]
    OutOfVocab(String),
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("rule at step {0} has zero probability under the length budget")]
    Masked(usize),
    #[error("rules follow the point where the expression closes")]
    Trailing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    grammar: Grammar,
    arity: Vec<usize>,
    max_len: usize,
    theta: Vec<f64>,
}

/// Decoding state before a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub position: usize,
    pub prev: Option<usize>,
    pub open: usize,
}

impl Policy {
    /// Uniform policy: all logits zero.
    pub fn new(grammar: Grammar, max_len: usize) -> Self {
        let n = grammar.len();
        let arity = grammar.rules().iter().map(|r| r.arity()).collect();
        Policy { grammar, arity, max_len, theta: vec![0.0; max_len * (n + 1) * n] }
    }

    pub fn with_theta(grammar: Grammar, max_len: usize, theta: Vec<f64>) -> Self {
        let mut p = Policy::new(grammar, max_len);
        assert_eq!(p.theta.len(), theta.len(), "parameter length");
        p.theta = theta;
        p
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn n_rules(&self) -> usize {
        self.arity.len()
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Offset of the logit row for a decoding context.
    pub fn row(&self, position: usize, prev: Option<usize>) -> usize {
        let n = self.n_rules();
        (position * (n + 1) + prev.unwrap_or(n)) * n
    }

    pub fn allowed(&self, step: Step, rule: usize) -> bool {
        let open = step.open - 1 + self.arity[rule];
        step.open > 0 && step.position + 1 + open <= self.max_len
    }

    /// Next-rule distribution; masked rules get probability zero.
    pub fn probs(&self, step: Step) -> Vec<f64> {
        let row = &self.theta[self.row(step.position, step.prev)..][..self.n_rules()];
        let mut max = f64::NEG_INFINITY;
        for (a, &v) in row.iter().enumerate() {
            if self.allowed(step, a) {
                max = max.max(v);
            }
        }
        let mut out: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(a, &v)| if self.allowed(step, a) { (v - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= z);
        out
    }

    pub fn next(&self, step: Step, rule: usize) -> Step {
        Step {
            position: step.position + 1,
            prev: Some(rule),
            open: step.open - 1 + self.arity[rule],
        }
    }

    pub fn start() -> Step {
        Step { position: 0, prev: None, open: 1 }
    }

    /// Draws a complete sequence; returns rule indices and their log probability.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<usize>, f64) {
        let mut step = Policy::start();
        let mut out = Vec::new();
        let mut logp = 0.0;
        while step.open > 0 {
            let probs = self.probs(step);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = None;
            for (a, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    pick = Some(a);
                    if u < acc {
                        break;
                    }
                }
            }
            let a = pick.expect("a terminal rule is always allowed");
            logp += probs[a].ln();
            out.push(a);
            step = self.next(step, a);
        }
        (out, logp)
    }

    pub fn indices(&self, seq: &RuleSequence) -> Result<Vec<usize>, PolicyError> {
        seq.rules()
            .iter()
            .map(|r| self.grammar.index_of(*r).ok_or_else(|| PolicyError::OutOfVocab(r.to_string())))
            .collect()
    }

    pub fn to_sequence(&self, indices: &[usize]) -> RuleSequence {
        indices.iter().map(|&i| self.grammar.rules()[i]).collect()
    }

    /// Teacher-forced log probability of a rule-index sequence.
    pub fn score_indices(&self, indices: &[usize]) -> Result<f64, PolicyError> {
        if indices.len() > self.max_len {
            return Err(PolicyError::TooLong { len: indices.len(), max_len: self.max_len });
        }
        let mut step = Policy::start();
        let mut logp = 0.0;
        for (t, &a) in indices.iter().enumerate() {
            if step.open == 0 {
                return Err(PolicyError::Trailing);
            }
            if !self.allowed(step, a) {
                return Err(PolicyError::Masked(t));
            }
            logp += self.probs(step)[a].ln();
            step = self.next(step, a);
        }
        Ok(logp)
    }

    pub fn score_sequence(&self, seq: &RuleSequence) -> Result<f64, PolicyError> {
        self.score_indices(&self.indices(seq)?)
    }

    /// Adds `scale · ∇θ log p(indices)` to `out`. The sequence must be one
    /// the policy can produce.
    pub fn accumulate_grad_logp(&self, indices: &[usize], scale: f64, out: &mut [f64]) {
        let mut step = Policy::start();
        for &a in indices {
            let probs = self.probs(step);
            let row = self.row(step.position, step.prev);
            for (b, &p) in probs.iter().enumerate() {
                if p > 0.0 || b == a {
                    let indicator = if b == a { 1.0 } else { 0.0 };
                    out[row + b] += scale * (indicator - p);
                }
            }
            step = self.next(step, a);
        }
    }

    pub fn grad_logp(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.accumulate_grad_logp(indices, 1.0, &mut out);
        out
    }

    /// Adds the gradient of `Σ_t weight·γ^t·H(π(·|context_t))` along the
    /// decoding path of `indices`, scaled by `scale`.
    pub fn accumulate_entropy_grad(
        &self,
        indices: &[usize],
        weight: f64,
        gamma: f64,
        scale: f64,
        out: &mut [f64],
    ) {
        let mut step = Policy::start();
        let mut w = weight;
        for &a in indices {
            let probs = self.probs(step);
            let row = self.row(step.position, step.prev);
            let h: f64 = -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            for (b, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    out[row + b] += scale * w * (-p * (p.ln() + h));
                }
            }
            w *= gamma;
            step = self.next(step, a);
        }
    }

    /// Mean per-step entropy along a path.
    pub fn path_entropy(&self, indices: &[usize]) -> f64 {
        let mut step = Policy::start();
        let mut total = 0.0;
        for &a in indices {
            let probs = self.probs(step);
            total -= probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            step = self.next(step, a);
        }
        total / indices.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grammar() -> Grammar {
        Grammar::parse("A->(A+A)\nA->log(A)\nA->x1\nA->x2").unwrap()
    }

    #[test]
    fn probabilities_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Policy::new(grammar(), 5);
        for v in p.theta_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
        for position in 0..5 {
            for prev in [None, Some(0), Some(1), Some(2), Some(3)] {
                for open in 1..=5usize.saturating_sub(position) {
                    let s: f64 = p.probs(Step { position, prev, open }).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn uniform_first_step() {
        // with a tight budget the mask removes choices, so leave slack
        let p = Policy::new(grammar(), 20);
        let probs = p.probs(Policy::start());
        assert!(probs.iter().all(|&q| (q - 0.25).abs() < 1e-15));
        assert!((p.score_indices(&[0, 2, 3]).unwrap() - 3.0 * 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_policy_has_zero_logp() {
        let mut p = Policy::new(grammar(), 4);
        // force x1 at the first step
        let row = p.row(0, None);
        p.theta_mut()[row + 2] = 1e4;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (seq, logp) = p.sample(&mut rng);
        assert_eq!(seq, vec![2]);
        assert_eq!(logp, 0.0);
    }

    #[test]
    fn sampling_is_seeded_and_rescores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = Policy::new(grammar(), 6);
        for v in p.theta_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let a = p.sample(&mut ChaCha8Rng::seed_from_u64(9));
        let b = p.sample(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        for _ in 0..200 {
            let (seq, logp) = p.sample(&mut rng);
            assert!(seq.len() <= 6);
            assert!(p.to_sequence(&seq).is_complete());
            assert!((p.score_indices(&seq).unwrap() - logp).abs() < 1e-12);
        }
    }

    #[test]
    fn scoring_errors() {
        let p = Policy::new(grammar(), 3);
        assert_eq!(
            p.score_indices(&[1, 1, 1, 2]),
            Err(PolicyError::TooLong { len: 4, max_len: 3 })
        );
        assert_eq!(p.score_indices(&[2, 3]), Err(PolicyError::Trailing));
        assert_eq!(p.score_indices(&[1, 0, 2]), Err(PolicyError::Masked(1)));
        let other = "A->sin(A), A->x1".parse().unwrap();
        assert!(matches!(p.score_sequence(&other), Err(PolicyError::OutOfVocab(_))));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = Policy::new(grammar(), 4);
        for v in p.theta_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let seq = [0, 1, 2, 3];
        let g = p.grad_logp(&seq);
        for i in 0..p.dim() {
            let mut up = p.clone();
            up.theta_mut()[i] += 1e-6;
            let mut down = p.clone();
            down.theta_mut()[i] -= 1e-6;
            let fd = (up.score_indices(&seq).unwrap() - down.score_indices(&seq).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }
}
