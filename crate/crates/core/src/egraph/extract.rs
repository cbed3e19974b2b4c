//! Term extraction: cheapest term by a cost model, or random walks.

use std::collections::HashSet;

use rand::Rng;

use super::{EGraph, EGraphError, Id};
use crate::grammar::{Expr, Op, RuleSequence};

/// Per-operator cost. Costs must be positive.
pub trait CostFn {
    fn cost(&self, op: Op) -> f64;
}

impl<F: Fn(Op) -> f64> CostFn for F {
    fn cost(&self, op: Op) -> f64 {
        self(op)
    }
}

/// Every operator costs 1, so the cheapest term is the smallest tree.
pub fn ast_size(_: Op) -> f64 {
    1.0
}

impl EGraph {
    /// Best cost and e-node index for every class slot; `None` where no
    /// finite term exists.
    fn best_nodes(&self, cost: &impl CostFn) -> Vec<Option<(f64, usize)>> {
        let mut best: Vec<Option<(f64, usize)>> = vec![None; self.classes.len()];
        loop {
            let mut changed = false;
            for id in self.class_ids() {
                for (k, node) in self.nodes(id).iter().enumerate() {
                    let mut total = cost.cost(node.op);
                    for child in &node.children {
                        match best[self.find(*child).index()] {
                            Some((c, _)) => total += c,
                            None => {
                                total = f64::INFINITY;
                                break;
                            }
                        }
                    }
                    if !total.is_finite() {
                        continue;
                    }
                    let slot = &mut best[id.index()];
                    if slot.is_none_or(|(c, _)| total < c) {
                        *slot = Some((total, k));
                        changed = true;
                    }
                }
            }
            if !changed {
                return best;
            }
        }
    }

    /// Cheapest term in the class of `id` and its cost.
    pub fn extract_best(&self, id: Id, cost: &impl CostFn) -> Result<(f64, Expr), EGraphError> {
        let best = self.best_nodes(cost);
        let id = self.find(id);
        let (total, _) = best[id.index()].ok_or(EGraphError::Unextractable(id))?;
        Ok((total, self.build_best(id, &best)))
    }

    fn build_best(&self, id: Id, best: &[Option<(f64, usize)>]) -> Expr {
        let id = self.find(id);
        let (_, k) = best[id.index()].expect("finite child cost");
        let node = &self.nodes(id)[k];
        let children = node.children.iter().map(|&c| self.build_best(c, best)).collect();
        Expr::new(node.op, children)
    }

    /// Cheapest term of the root class.
    pub fn extract_cost(&self, cost: &impl CostFn) -> Result<Expr, EGraphError> {
        let root = self.root().ok_or(EGraphError::NoRoot)?;
        self.extract_best(root, cost).map(|(_, e)| e)
    }

    fn walk<R: Rng + ?Sized>(&self, id: Id, depth: usize, rng: &mut R) -> Option<Expr> {
        if depth == 0 {
            return None;
        }
        let nodes = self.nodes(id);
        let node = &nodes[rng.random_range(0..nodes.len())];
        let children = node
            .children
            .iter()
            .map(|&c| self.walk(c, depth - 1, rng))
            .collect::<Option<Vec<_>>>()?;
        Some(Expr::new(node.op, children))
    }

    /// Up to `k` distinct terms from the root class. Each walk picks a
    /// uniformly random e-node in every class it visits; walks deeper than
    /// `max_depth` are discarded. The attempt budget is bounded, so fewer
    /// than `k` terms come back when the class holds fewer.
    pub fn random_walk_exprs<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        k: usize,
        max_depth: usize,
    ) -> Result<Vec<Expr>, EGraphError> {
        let root = self.root().ok_or(EGraphError::NoRoot)?;
        let attempts = k.saturating_mul(32).saturating_add(64);
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for _ in 0..attempts {
            if out.len() >= k {
                break;
            }
            if let Some(e) = self.walk(root, max_depth, rng) {
                if seen.insert(e.clone()) {
                    out.push(e);
                }
            }
        }
        if out.is_empty() {
            return Err(EGraphError::NoWalk(max_depth));
        }
        Ok(out)
    }

    /// Random-walk extraction returning rule sequences.
    pub fn extract_random_walk<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        k: usize,
        max_depth: usize,
    ) -> Result<Vec<RuleSequence>, EGraphError> {
        let mut seen = HashSet::new();
        Ok(self
            .random_walk_exprs(rng, k, max_depth)?
            .into_iter()
            .map(|e| e.to_sequence())
            .filter(|s| seen.insert(s.clone()))
            .collect())
    }
}
