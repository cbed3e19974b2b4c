//! Monte Carlo tree search over production-rule sequences.
//!
//! Each tree edge is a grammar rule, so every node is a partial rule sequence.
//! Selection follows UCT, expansion adds one child per rule that still fits
//! the length budget, and every child gets a batch of random completions whose
//! fitted rewards are averaged. With equivalence sharing enabled, the reward
//! of a simulated path is also credited to every equivalent path that already
//! exists in the tree.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataopt::{Dataset, FitConfig, FitResult, Fitter, TopK};
use crate::egraph::{EGraph, Limits};
use crate::grammar::{Expr, Grammar, ProductionRule, RuleSequence};
use crate::rewrite::RewriteRule;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MctsError {
    #[error("node {0} holds a complete expression and cannot be expanded")]
    Terminal(usize),
    #[error("node {0} is already expanded")]
    Expanded(usize),
    #[error("node {0} is not in the tree")]
    MissingNode(usize),
    #[error("rule `{0}` is not in the grammar")]
    UnknownRule(String),
}

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub visits: u64,
    pub reward_sum: f64,
}

impl EdgeStats {
    pub fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.reward_sum / self.visits as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    parent: Option<NodeId>,
    rule: Option<usize>,
    len: usize,
    open: usize,
    children: BTreeMap<usize, NodeId>,
    edges: BTreeMap<usize, EdgeStats>,
    visits: u64,
    simulations: u64,
    expanded: bool,
    exhausted: bool,
}

impl SearchNode {
    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    /// Rule index on the edge from the parent.
    pub fn rule(&self) -> Option<usize> {
        self.rule
    }

    pub fn depth(&self) -> usize {
        self.len
    }

    pub fn is_terminal(&self) -> bool {
        self.open == 0
    }

    pub fn children(&self) -> &BTreeMap<usize, NodeId> {
        &self.children
    }

    pub fn edge(&self, rule: usize) -> Option<&EdgeStats> {
        self.edges.get(&rule)
    }

    pub fn visits(&self) -> u64 {
        self.visits
    }

    pub fn simulations(&self) -> u64 {
        self.simulations
    }

    /// Whether every expression below this node has been evaluated.
    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }
}

/// `Reward(s,a) + c·sqrt(ln visits(s) / visits(s,a))`; unvisited edges score +∞.
pub fn uct(mean_reward: f64, parent_visits: u64, edge_visits: u64, c: f64) -> f64 {
    if edge_visits == 0 {
        return f64::INFINITY;
    }
    mean_reward + c * ((parent_visits as f64).ln() / edge_visits as f64).sqrt()
}

/// Arena-allocated search tree; node 0 is the root `A`.
#[derive(Debug, Clone)]
pub struct SearchTree {
    grammar: Grammar,
    max_depth: usize,
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new(grammar: Grammar, max_depth: usize) -> Self {
        let root = SearchNode {
            parent: None,
            rule: None,
            len: 0,
            open: 1,
            children: BTreeMap::new(),
            edges: BTreeMap::new(),
            visits: 0,
            simulations: 0,
            expanded: false,
            exhausted: false,
        };
        SearchTree { grammar, max_depth, nodes: vec![root] }
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    /// Rule indices on the path from the root to `id`.
    pub fn path_indices(&self, id: NodeId) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes[id].len);
        let mut cur = id;
        while let Some(rule) = self.nodes[cur].rule {
            out.push(rule);
            cur = self.nodes[cur].parent.expect("non-root has a parent");
        }
        out.reverse();
        out
    }

    pub fn path(&self, id: NodeId) -> RuleSequence {
        self.path_indices(id).into_iter().map(|i| self.grammar.rules()[i]).collect()
    }

    /// Rules that can extend `id` and still close within the length budget.
    pub fn allowed_rules(&self, id: NodeId) -> Vec<usize> {
        let node = &self.nodes[id];
        if node.open == 0 {
            return Vec::new();
        }
        (0..self.grammar.len())
            .filter(|&r| {
                let open = node.open - 1 + self.grammar.rules()[r].arity();
                node.len + 1 + open <= self.max_depth
            })
            .collect()
    }

    fn add_child(&mut self, parent: NodeId, rule: usize) -> NodeId {
        if let Some(&child) = self.nodes[parent].children.get(&rule) {
            return child;
        }
        let p = &self.nodes[parent];
        let child = SearchNode {
            parent: Some(parent),
            rule: Some(rule),
            len: p.len + 1,
            open: p.open - 1 + self.grammar.rules()[rule].arity(),
            children: BTreeMap::new(),
            edges: BTreeMap::new(),
            visits: 0,
            simulations: 0,
            expanded: false,
            exhausted: false,
        };
        let id = self.nodes.len();
        self.nodes.push(child);
        let p = &mut self.nodes[parent];
        p.children.insert(rule, id);
        p.edges.entry(rule).or_default();
        id
    }

    /// Adds one child per allowed rule.
    pub fn expand(&mut self, id: NodeId) -> Result<Vec<NodeId>, MctsError> {
        let node = self.nodes.get(id).ok_or(MctsError::MissingNode(id))?;
        if node.open == 0 {
            return Err(MctsError::Terminal(id));
        }
        if node.expanded {
            return Err(MctsError::Expanded(id));
        }
        let children = self
            .allowed_rules(id)
            .into_iter()
            .map(|r| self.add_child(id, r))
            .collect();
        self.nodes[id].expanded = true;
        Ok(children)
    }

    /// Creates the nodes along `seq` if missing and returns the last one.
    pub fn insert_path(&mut self, seq: &RuleSequence) -> Result<NodeId, MctsError> {
        let mut cur = self.root();
        for rule in seq.rules() {
            let r = self
                .grammar
                .index_of(*rule)
                .ok_or_else(|| MctsError::UnknownRule(rule.to_string()))?;
            if self.nodes[cur].open == 0 {
                return Err(MctsError::Terminal(cur));
            }
            cur = self.add_child(cur, r);
        }
        Ok(cur)
    }

    /// The node reached by following `seq` exactly from the root.
    pub fn find_path(&self, seq: &RuleSequence) -> Option<NodeId> {
        let mut cur = self.root();
        for rule in seq.rules() {
            let r = self.grammar.index_of(*rule)?;
            cur = *self.nodes[cur].children.get(&r)?;
        }
        Some(cur)
    }

    pub fn uct_score(&self, id: NodeId, rule: usize, c: f64) -> f64 {
        let node = &self.nodes[id];
        let edge = node.edges.get(&rule).copied().unwrap_or_default();
        uct(edge.mean(), node.visits, edge.visits, c)
    }

    /// Descends by maximal UCT, lowest rule index on ties, to the first node
    /// that is unexpanded or terminal. Exhausted children are skipped.
    pub fn select(&self, c: f64) -> NodeId {
        let mut cur = self.root();
        loop {
            let node = &self.nodes[cur];
            if !node.expanded || node.open == 0 || node.children.is_empty() {
                return cur;
            }
            let mut best: Option<(f64, NodeId)> = None;
            for (&rule, &child) in &node.children {
                if self.nodes[child].exhausted {
                    continue;
                }
                let score = self.uct_score(cur, rule, c);
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, child));
                }
            }
            match best {
                Some((_, child)) => cur = child,
                None => return cur,
            }
        }
    }

    /// Marks a simulated complete expression as exhausted, then every
    /// expanded ancestor whose children are all exhausted. Selection skips
    /// exhausted subtrees.
    pub fn close(&mut self, id: NodeId) {
        if self.nodes[id].open != 0 {
            return;
        }
        self.nodes[id].exhausted = true;
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            let p = &self.nodes[parent];
            if !p.expanded || !p.children.values().all(|&c| self.nodes[c].exhausted) {
                break;
            }
            self.nodes[parent].exhausted = true;
            cur = parent;
        }
    }

    /// Records a simulation with `reward` at `id` and updates every edge and
    /// node on its path to the root.
    pub fn backpropagate(&mut self, id: NodeId, reward: f64) -> Result<(), MctsError> {
        if id >= self.nodes.len() {
            return Err(MctsError::MissingNode(id));
        }
        self.nodes[id].simulations += 1;
        self.nodes[id].visits += 1;
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            let rule = self.nodes[cur].rule.expect("non-root has a rule");
            let edge = self.nodes[parent].edges.entry(rule).or_default();
            edge.visits += 1;
            edge.reward_sum += reward;
            self.nodes[parent].visits += 1;
            cur = parent;
        }
        Ok(())
    }

    /// Backpropagates `reward` along `id`'s path and along every equivalent
    /// path found in the tree. Equivalents come from saturating the partial
    /// expression of the path and sampling up to `samples` terms by random
    /// walk; only terms whose open nonterminals trail every rule correspond
    /// to a rule sequence. Returns the number of paths updated.
    pub fn egg_backpropagate(
        &mut self,
        id: NodeId,
        reward: f64,
        rules: &[RewriteRule],
        samples: usize,
        limits: &Limits,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, MctsError> {
        self.backpropagate(id, reward)?;
        let mut updated = 1;
        for other in self.equivalent_nodes(id, rules, samples, limits, rng) {
            self.backpropagate(other, reward)?;
            updated += 1;
        }
        Ok(updated)
    }

    /// Tree nodes whose paths are equivalent to the path of `id`.
    pub fn equivalent_nodes(
        &self,
        id: NodeId,
        rules: &[RewriteRule],
        samples: usize,
        limits: &Limits,
        rng: &mut ChaCha8Rng,
    ) -> Vec<NodeId> {
        let path = self.path(id);
        if path.is_empty() || rules.is_empty() || samples == 0 {
            return Vec::new();
        }
        let mut g = EGraph::from_expression(&path.to_expression().expr);
        g.saturate(rules, limits);
        let walk_depth = self.max_depth + 2;
        let Ok(terms) = g.random_walk_exprs(rng, samples, walk_depth) else {
            return Vec::new();
        };
        let mut found = Vec::new();
        for term in terms {
            if !term.is_prefix_form() {
                continue;
            }
            let seq = term.to_sequence();
            if let Some(node) = self.find_path(&seq) {
                if node != id && !found.contains(&node) {
                    found.push(node);
                }
            }
        }
        found
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MctsConfig {
    pub c: f64,
    pub rollouts: usize,
    pub max_depth: usize,
    pub iterations: usize,
    pub egg: bool,
    pub egg_samples: usize,
    pub limits: Limits,
    pub seed: u64,
    pub fit: FitConfig,
    pub top_k: usize,
    /// Close complete expressions once simulated so selection does not
    /// revisit them; their reward is deterministic.
    pub prune_exhausted: bool,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            c: std::f64::consts::SQRT_2,
            rollouts: 4,
            max_depth: 12,
            iterations: 200,
            egg: false,
            egg_samples: 8,
            limits: Limits { max_iter: 5, max_nodes: 2000 },
            seed: 0,
            fit: FitConfig::default(),
            top_k: 10,
            prune_exhausted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsTraceRow {
    pub iteration: usize,
    pub tree_nodes: usize,
    pub best_nmse: f64,
    pub updated_paths: usize,
}

#[derive(Debug, Clone)]
pub struct MctsResult {
    pub best_sequence: RuleSequence,
    pub best_expr: Expr,
    pub best_fit: FitResult,
    pub top: TopK,
    pub trace: Vec<MctsTraceRow>,
    pub tree_nodes: usize,
}

struct Best {
    expr: Option<Expr>,
    fit: Option<FitResult>,
    top: TopK,
}

impl Best {
    fn offer(&mut self, expr: &Expr, fit: &FitResult) {
        self.top.offer(expr, fit);
        let better = match &self.fit {
            None => true,
            Some(b) => fit.nmse < b.nmse,
        };
        if better && fit.nmse.is_finite() {
            self.expr = Some(expr.clone());
            self.fit = Some(fit.clone());
        }
    }

    fn nmse(&self) -> f64 {
        self.fit.as_ref().map_or(f64::INFINITY, |f| f.nmse)
    }
}

/// Random completions of each node's path, fitted in parallel. Returns the
/// mean reward per node in input order.
fn simulate_batch(
    tree: &SearchTree,
    ids: &[NodeId],
    rollouts: usize,
    fitter: &Fitter<'_>,
    rng: &mut ChaCha8Rng,
    best: &mut Best,
) -> Vec<f64> {
    let rollouts = rollouts.max(1);
    let mut exprs = Vec::with_capacity(ids.len() * rollouts);
    for &id in ids {
        let path = tree.path(id);
        for _ in 0..rollouts {
            let seq = tree.grammar.complete_randomly(&path, rng);
            exprs.push(seq.to_expression().expr);
        }
    }
    let fits = fitter.fit_batch(&exprs);
    for (e, f) in exprs.iter().zip(&fits) {
        best.offer(e, f);
    }
    fits.chunks(rollouts)
        .map(|chunk| chunk.iter().map(FitResult::reward).sum::<f64>() / chunk.len() as f64)
        .collect()
}

/// Random completions of one node, returning the mean reward and the best
/// completion.
pub fn simulate(
    tree: &SearchTree,
    id: NodeId,
    rollouts: usize,
    fitter: &Fitter<'_>,
    rng: &mut ChaCha8Rng,
) -> (f64, Option<(Expr, FitResult)>) {
    let mut best = Best { expr: None, fit: None, top: TopK::new(1) };
    let mean = simulate_batch(tree, &[id], rollouts, fitter, rng, &mut best)[0];
    (mean, best.expr.zip(best.fit))
}

/// Runs the search for `cfg.iterations` rounds of select, expand, simulate
/// and backpropagate. `rules` is used only when `cfg.egg` is set.
pub fn run_mcts(cfg: &MctsConfig, grammar: &Grammar, data: &Dataset, rules: &[RewriteRule]) -> MctsResult {
    let mut tree = SearchTree::new(grammar.clone(), cfg.max_depth.max(1));
    let fitter = Fitter::new(data, cfg.fit);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = Best { expr: None, fit: None, top: TopK::new(cfg.top_k) };
    let mut trace = Vec::with_capacity(cfg.iterations);

    for iteration in 1..=cfg.iterations.max(1) {
        if tree.node(tree.root()).exhausted {
            break;
        }
        let leaf = tree.select(cfg.c);
        let targets = if tree.node(leaf).is_terminal() || tree.node(leaf).expanded {
            vec![leaf]
        } else {
            let children = tree.expand(leaf).expect("selected leaf is expandable");
            if children.is_empty() {
                vec![leaf]
            } else {
                children
            }
        };
        let rewards = simulate_batch(&tree, &targets, cfg.rollouts, &fitter, &mut rng, &mut best);
        let mut updated = 0;
        for (&id, &reward) in targets.iter().zip(&rewards) {
            if cfg.egg {
                updated += tree
                    .egg_backpropagate(id, reward, rules, cfg.egg_samples, &cfg.limits, &mut rng)
                    .expect("node exists");
            } else {
                tree.backpropagate(id, reward).expect("node exists");
                updated += 1;
            }
            if cfg.prune_exhausted {
                tree.close(id);
            }
        }
        trace.push(MctsTraceRow {
            iteration,
            tree_nodes: tree.len(),
            best_nmse: best.nmse(),
            updated_paths: updated,
        });
    }

    let best_expr = best.expr.clone().unwrap_or_else(Expr::hole);
    MctsResult {
        best_sequence: best_expr.to_sequence(),
        best_expr,
        best_fit: best.fit.clone().unwrap_or_else(|| FitResult {
            coefficients: Vec::new(),
            nmse: f64::INFINITY,
            mse: f64::INFINITY,
            rmse: f64::INFINITY,
            nrmse: f64::INFINITY,
            converged: false,
            iterations: 0,
        }),
        top: best.top,
        trace,
        tree_nodes: tree.len(),
    }
}

/// Looks up grammar indices for a rule sequence.
pub fn rule_indices(grammar: &Grammar, seq: &RuleSequence) -> Result<Vec<usize>, MctsError> {
    seq.rules()
        .iter()
        .map(|r: &ProductionRule| grammar.index_of(*r).ok_or_else(|| MctsError::UnknownRule(r.to_string())))
        .collect()
}
