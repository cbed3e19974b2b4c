//! Equality graphs over grammar operators.
//!
//! An [`EGraph`] stores e-classes of equivalent e-nodes. New terms are
//! hash-consed through a memo table, classes are joined through a union-find,
//! and [`EGraph::rebuild`] restores congruence after a batch of merges, using
//! parent lists and a worklist in the deferred style of `egg`.
//!
//! Open nonterminals (`Op::Hole`) are never hash-consed: each occurrence gets
//! its own class, so two independent holes of a partial expression are never
//! considered equal.

mod dot;
mod extract;
mod unionfind;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{Expr, Op};
use crate::rewrite::{Pattern, RewriteRule};

pub use extract::{ast_size, CostFn};
pub use unionfind::UnionFind;

/// E-class identifier. Only the canonical representative of a class is
/// meaningful as a class name; use [`EGraph::find`] to canonicalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Id(pub(crate) u32);

impl Id {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for Id {
    fn from(i: usize) -> Self {
        Id(i as u32)
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EGraphError {
    #[error("operand {0} is not an e-class of this graph")]
    DanglingId(Id),
    #[error("e-node {op:?} expects {expected} operands, got {got}")]
    Arity { op: Op, expected: usize, got: usize },
    #[error("placeholder `{0}` is not bound")]
    UnboundPlaceholder(char),
    #[error("the graph has no root class")]
    NoRoot,
    #[error("no finite term is reachable from {0}")]
    Unextractable(Id),
    #[error("no walk within depth {0} succeeded")]
    NoWalk(usize),
}

/// An operator applied to e-classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ENode {
    pub op: Op,
    pub children: Vec<Id>,
}

impl ENode {
    pub fn new(op: Op, children: Vec<Id>) -> Self {
        ENode { op, children }
    }

    pub fn leaf(op: Op) -> Self {
        ENode::new(op, Vec::new())
    }
}

#[derive(Debug, Clone, Default)]
struct EClass {
    nodes: Vec<ENode>,
    parents: Vec<(ENode, Id)>,
}

/// Placeholder bindings of one match, sorted by placeholder.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subst(Vec<(u8, Id)>);

impl Subst {
    pub fn new() -> Self {
        Subst::default()
    }

    pub fn get(&self, placeholder: u8) -> Option<Id> {
        self.0.iter().find(|(p, _)| *p == placeholder).map(|(_, id)| *id)
    }

    pub fn insert(&mut self, placeholder: u8, id: Id) {
        match self.0.binary_search_by_key(&placeholder, |(p, _)| *p) {
            Ok(i) => self.0[i].1 = id,
            Err(i) => self.0.insert(i, (placeholder, id)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, Id)> + '_ {
        self.0.iter().map(|(p, id)| (*p as char, *id))
    }
}

/// One e-matching result: the class where the pattern occurs and its bindings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Match {
    pub class: Id,
    pub subst: Subst,
}

/// Budget for equality saturation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_iter: usize,
    pub max_nodes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_iter: 20, max_nodes: 50_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub iterations: usize,
    pub saturated: bool,
    pub nodes: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EGraph {
    uf: UnionFind,
    memo: HashMap<ENode, Id>,
    classes: Vec<Option<EClass>>,
    pending: Vec<Id>,
    root: Option<Id>,
    n_nodes: usize,
    n_classes: usize,
    version: u64,
}

impl EGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph holding exactly `expr`, with its class recorded as the root.
    pub fn from_expression(expr: &Expr) -> Self {
        let mut g = EGraph::new();
        let root = g.add_expr(expr);
        g.root = Some(root);
        g
    }

    pub fn root(&self) -> Option<Id> {
        self.root.map(|r| self.find(r))
    }

    pub fn set_root(&mut self, id: Id) {
        self.root = Some(id);
    }

    pub fn find(&self, id: Id) -> Id {
        self.uf.find(id)
    }

    /// Number of live e-classes.
    pub fn class_count(&self) -> usize {
        self.n_classes
    }

    /// Number of e-nodes stored across classes. Exact after a rebuild.
    pub fn node_count(&self) -> usize {
        self.n_nodes
    }

    /// Monotone counter bumped by every structural change.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Canonical class ids in increasing order.
    pub fn class_ids(&self) -> impl Iterator<Item = Id> + '_ {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_some())
            .map(|(i, _)| Id(i as u32))
    }

    /// E-nodes of the class containing `id`.
    pub fn nodes(&self, id: Id) -> &[ENode] {
        &self.class(self.find(id)).nodes
    }

    fn class(&self, root: Id) -> &EClass {
        self.classes[root.index()].as_ref().expect("live class")
    }

    fn class_mut(&mut self, root: Id) -> &mut EClass {
        self.classes[root.index()].as_mut().expect("live class")
    }

    fn canonicalize(&self, node: &ENode) -> ENode {
        ENode {
            op: node.op,
            children: node.children.iter().map(|&c| self.find(c)).collect(),
        }
    }

    /// Adds an e-node, returning the existing class when an equal canonical
    /// e-node is already present.
    pub fn add(&mut self, node: ENode) -> Result<Id, EGraphError> {
        if node.children.len() != node.op.arity() {
            return Err(EGraphError::Arity {
                op: node.op,
                expected: node.op.arity(),
                got: node.children.len(),
            });
        }
        if let Some(&bad) = node.children.iter().find(|c| c.index() >= self.uf.len()) {
            return Err(EGraphError::DanglingId(bad));
        }
        Ok(self.add_unchecked(node))
    }

    fn add_unchecked(&mut self, node: ENode) -> Id {
        let node = self.canonicalize(&node);
        let hashcons = node.op != Op::Hole;
        if hashcons {
            if let Some(&id) = self.memo.get(&node) {
                return self.find(id);
            }
        }
        let id = self.uf.make_set();
        for &child in &node.children {
            self.class_mut(child).parents.push((node.clone(), id));
        }
        if hashcons {
            self.memo.insert(node.clone(), id);
        }
        self.classes.push(Some(EClass { nodes: vec![node], parents: Vec::new() }));
        self.n_nodes += 1;
        self.n_classes += 1;
        self.version += 1;
        id
    }

    /// Adds every sub-term of `expr` bottom-up.
    pub fn add_expr(&mut self, expr: &Expr) -> Id {
        let children = expr.children().iter().map(|c| self.add_expr(c)).collect();
        self.add_unchecked(ENode::new(expr.op(), children))
    }

    /// The class representing `expr`, if the graph contains it.
    pub fn lookup_expr(&self, expr: &Expr) -> Option<Id> {
        if expr.op() == Op::Hole {
            return None;
        }
        let children = expr
            .children()
            .iter()
            .map(|c| self.lookup_expr(c))
            .collect::<Option<Vec<_>>>()?;
        let node = self.canonicalize(&ENode::new(expr.op(), children));
        self.memo.get(&node).map(|&id| self.find(id))
    }

    /// Joins two classes. Congruence is restored by the next [`rebuild`].
    ///
    /// [`rebuild`]: EGraph::rebuild
    pub fn merge(&mut self, a: Id, b: Id) -> Id {
        let (a, b) = (self.uf.find_mut(a), self.uf.find_mut(b));
        if a == b {
            return a;
        }
        let root = self.uf.union(a, b);
        let other = if root == a { b } else { a };
        let absorbed = self.classes[other.index()].take().expect("live class");
        let class = self.class_mut(root);
        class.nodes.extend(absorbed.nodes);
        class.parents.extend(absorbed.parents);
        self.pending.push(root);
        self.n_classes -= 1;
        self.version += 1;
        root
    }

    /// Restores the congruence invariant. Returns the number of classes repaired.
    pub fn rebuild(&mut self) -> usize {
        let mut repaired = 0;
        while !self.pending.is_empty() {
            let mut todo: Vec<Id> = std::mem::take(&mut self.pending)
                .into_iter()
                .map(|id| self.uf.find_mut(id))
                .collect();
            todo.sort_unstable();
            todo.dedup();
            for id in todo {
                self.repair(id);
                repaired += 1;
            }
        }
        self.normalize_classes();
        repaired
    }

    fn repair(&mut self, id: Id) {
        let id = self.find(id);
        let parents = std::mem::take(&mut self.class_mut(id).parents);
        for (node, class) in &parents {
            self.memo.remove(node);
            let node = self.canonicalize(node);
            let class = self.find(*class);
            if node.op != Op::Hole {
                self.memo.insert(node, class);
            }
        }
        let mut seen: HashMap<ENode, Id> = HashMap::new();
        let mut kept = Vec::with_capacity(parents.len());
        for (node, class) in parents {
            let node = self.canonicalize(&node);
            if let Some(&other) = seen.get(&node) {
                self.merge(other, class);
            } else {
                kept.push(node.clone());
            }
            let class = self.find(class);
            seen.insert(node, class);
        }
        let id = self.find(id);
        let restored = kept.into_iter().map(|n| {
            let c = self.find(seen[&n]);
            (n, c)
        });
        let restored: Vec<_> = restored.collect();
        self.class_mut(id).parents.extend(restored);
    }

    fn normalize_classes(&mut self) {
        let mut total = 0;
        for i in 0..self.classes.len() {
            let Some(class) = self.classes[i].take() else { continue };
            let mut nodes: Vec<ENode> = class.nodes.iter().map(|n| self.canonicalize(n)).collect();
            nodes.sort_unstable();
            nodes.dedup();
            total += nodes.len();
            self.classes[i] = Some(EClass { nodes, parents: class.parents });
        }
        self.n_nodes = total;
    }

    /// All matches of `pattern`, ordered by class id then bindings.
    pub fn ematch(&self, pattern: &Pattern) -> Vec<Match> {
        let mut out = Vec::new();
        for class in self.class_ids() {
            let mut found = Vec::new();
            self.match_in(pattern, class, Subst::new(), &mut found);
            found.sort_unstable();
            found.dedup();
            out.extend(found.into_iter().map(|subst| Match { class, subst }));
        }
        out
    }

    fn match_in(&self, pattern: &Pattern, id: Id, subst: Subst, out: &mut Vec<Subst>) {
        let id = self.find(id);
        if let Op::Placeholder(p) = pattern.op() {
            match subst.get(p) {
                Some(bound) if self.find(bound) != id => {}
                Some(_) => out.push(subst),
                None => {
                    let mut subst = subst;
                    subst.insert(p, id);
                    out.push(subst);
                }
            }
            return;
        }
        for node in &self.class(id).nodes {
            if node.op != pattern.op() {
                continue;
            }
            let mut partial = vec![subst.clone()];
            for (sub_pattern, &child) in pattern.children().iter().zip(&node.children) {
                let mut next = Vec::new();
                for s in partial {
                    self.match_in(sub_pattern, child, s, &mut next);
                }
                partial = next;
                if partial.is_empty() {
                    break;
                }
            }
            out.extend(partial);
        }
    }

    /// Adds the instance of `pattern` under `subst` and returns its class.
    pub fn substitute(&mut self, pattern: &Pattern, subst: &Subst) -> Result<Id, EGraphError> {
        if let Op::Placeholder(p) = pattern.op() {
            return subst
                .get(p)
                .map(|id| self.find(id))
                .ok_or(EGraphError::UnboundPlaceholder(p as char));
        }
        let children = pattern
            .children()
            .iter()
            .map(|c| self.substitute(c, subst))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.add_unchecked(ENode::new(pattern.op(), children)))
    }

    /// Matches every rule against the current graph, then instantiates each
    /// right-hand side and merges it into the matched class, and rebuilds
    /// once. Returns the number of matches applied.
    pub fn apply_rewrite_rules(&mut self, rules: &[RewriteRule]) -> usize {
        self.apply_limited(rules, usize::MAX).0
    }

    fn apply_limited(&mut self, rules: &[RewriteRule], max_nodes: usize) -> (usize, bool) {
        let matches: Vec<(&RewriteRule, Match)> = rules
            .iter()
            .flat_map(|rule| self.ematch(rule.lhs()).into_iter().map(move |m| (rule, m)))
            .collect();
        let mut applied = 0;
        let mut exhausted = false;
        for (rule, m) in matches {
            if self.n_nodes > max_nodes {
                exhausted = true;
                break;
            }
            let new = self
                .substitute(rule.rhs(), &m.subst)
                .expect("rule placeholders are bound by its left side");
            self.merge(m.class, new);
            applied += 1;
        }
        self.rebuild();
        (applied, exhausted || self.n_nodes > max_nodes)
    }

    /// Runs rewrite rounds until nothing changes or a limit is reached.
    pub fn saturate(&mut self, rules: &[RewriteRule], limits: &Limits) -> SaturationReport {
        self.saturate_until(rules, limits, |_| false)
    }

    /// Like [`saturate`](EGraph::saturate) but also stops, unsaturated, as soon
    /// as `stop` holds after a round.
    pub fn saturate_until(
        &mut self,
        rules: &[RewriteRule],
        limits: &Limits,
        stop: impl Fn(&EGraph) -> bool,
    ) -> SaturationReport {
        self.rebuild();
        let mut iterations = 0;
        let mut saturated = false;
        while iterations < limits.max_iter {
            iterations += 1;
            let before = self.version;
            let (_, exhausted) = self.apply_limited(rules, limits.max_nodes);
            if self.version == before {
                saturated = true;
                break;
            }
            if exhausted || stop(self) {
                break;
            }
        }
        SaturationReport {
            iterations,
            saturated,
            nodes: self.node_count(),
            classes: self.class_count(),
        }
    }

    /// Every term of depth at most `max_depth` represented by the class of
    /// `id`. Returns `None` when more than `cap` terms would be produced.
    pub fn enumerate_terms(&self, id: Id, max_depth: usize, cap: usize) -> Option<BTreeSet<Expr>> {
        let mut memo = HashMap::new();
        self.enumerate_in(self.find(id), max_depth, cap, &mut memo)
            .map(|terms| terms.iter().cloned().collect())
    }

    fn enumerate_in(
        &self,
        id: Id,
        depth: usize,
        cap: usize,
        memo: &mut HashMap<(Id, usize), Option<std::rc::Rc<Vec<Expr>>>>,
    ) -> Option<std::rc::Rc<Vec<Expr>>> {
        if depth == 0 {
            return Some(Default::default());
        }
        if let Some(done) = memo.get(&(id, depth)) {
            return done.clone();
        }
        let mut terms = BTreeSet::new();
        for node in &self.class(id).nodes {
            let mut partial: Vec<Vec<Expr>> = vec![Vec::new()];
            for &child in &node.children {
                let options = self.enumerate_in(self.find(child), depth - 1, cap, memo);
                let Some(options) = options else {
                    memo.insert((id, depth), None);
                    return None;
                };
                let mut next = Vec::new();
                for prefix in &partial {
                    for option in options.iter() {
                        let mut p = prefix.clone();
                        p.push(option.clone());
                        next.push(p);
                    }
                    if next.len() > cap {
                        memo.insert((id, depth), None);
                        return None;
                    }
                }
                partial = next;
            }
            for children in partial {
                terms.insert(Expr::new(node.op, children));
            }
            if terms.len() > cap {
                memo.insert((id, depth), None);
                return None;
            }
        }
        let terms = std::rc::Rc::new(terms.into_iter().collect::<Vec<_>>());
        memo.insert((id, depth), Some(terms.clone()));
        Some(terms)
    }

    /// Compact binary encoding of the graph: per class a node count, per node
    /// an operator code, its payload and the operand class ids.
    pub fn encode_compact(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend((self.class_count() as u32).to_le_bytes());
        for id in self.class_ids() {
            let nodes = &self.class(id).nodes;
            out.extend(id.0.to_le_bytes());
            out.extend((nodes.len() as u32).to_le_bytes());
            for node in nodes {
                encode_op(node.op, &mut out);
                for child in &node.children {
                    out.extend(self.find(*child).0.to_le_bytes());
                }
            }
        }
        out
    }
}

/// Operator code followed by its payload, if any.
pub fn encode_op(op: Op, out: &mut Vec<u8>) {
    let (code, payload): (u8, Option<Vec<u8>>) = match op {
        Op::Add => (0, None),
        Op::Sub => (1, None),
        Op::Mul => (2, None),
        Op::Div => (3, None),
        Op::Pow => (4, None),
        Op::Neg => (5, None),
        Op::Sqrt => (6, None),
        Op::Log => (7, None),
        Op::Exp => (8, None),
        Op::Sin => (9, None),
        Op::Cos => (10, None),
        Op::Tan => (11, None),
        Op::Sec => (12, None),
        Op::Csc => (13, None),
        Op::Cot => (14, None),
        Op::Cosh => (15, None),
        Op::Tanh => (16, None),
        Op::Partial(i) => (17, Some(i.to_le_bytes().to_vec())),
        Op::Var(i) => (18, Some(i.to_le_bytes().to_vec())),
        Op::Const => (19, None),
        Op::Lit(v) => (20, Some(v.0.to_le_bytes().to_vec())),
        Op::Hole => (21, None),
        Op::Placeholder(c) => (22, Some(vec![c])),
    };
    out.push(code);
    out.extend(payload.unwrap_or_default());
}

/// Builds a graph from `expr` and saturates it.
pub fn equality_saturation(
    expr: &Expr,
    rules: &[RewriteRule],
    limits: &Limits,
) -> (EGraph, SaturationReport) {
    let mut g = EGraph::from_expression(expr);
    let report = g.saturate(rules, limits);
    (g, report)
}

/// Whether `a` and `b` are provably equal under `rules` within `limits`.
/// `false` may also mean the budget ran out first.
pub fn check_equivalent(a: &Expr, b: &Expr, rules: &[RewriteRule], limits: &Limits) -> bool {
    let mut g = EGraph::new();
    let ra = g.add_expr(a);
    let rb = g.add_expr(b);
    g.set_root(ra);
    if g.find(ra) == g.find(rb) {
        return true;
    }
    g.saturate_until(rules, limits, |g| g.find(ra) == g.find(rb));
    g.find(ra) == g.find(rb)
}
