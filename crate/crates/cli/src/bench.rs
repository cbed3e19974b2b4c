//! Memory growth of saturated e-graphs against explicit variant lists.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use eggsr::egraph::{encode_op, equality_saturation};
use eggsr::rewrite::{builtin_rules, Category};
use eggsr::{Expr, Limits, Op, RewriteRule};
use serde::Serialize;

/// Largest number of raw terms enumerated before giving up on a count.
pub const TERM_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    LogChain,
    SinChain,
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "log-chain" => Ok(Family::LogChain),
            "sin-chain" => Ok(Family::SinChain),
            other => Err(format!("unknown family `{other}` (expected log-chain or sin-chain)")),
        }
    }
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::LogChain => "log-chain",
            Family::SinChain => "sin-chain",
        }
    }

    /// `log(x1·(x2·(…·xn)))` or `sin(x1+(x2+(…+xn)))`.
    pub fn expression(self, n: u32) -> Expr {
        let (inner, outer) = match self {
            Family::LogChain => (Op::Mul, Op::Log),
            Family::SinChain => (Op::Add, Op::Sin),
        };
        let mut acc = Expr::var(n);
        for i in (1..n).rev() {
            acc = Expr::binary(inner, Expr::var(i), acc);
        }
        Expr::unary(outer, acc)
    }

    /// The expanding identity for the family plus reassociation.
    pub fn rules(self) -> Vec<RewriteRule> {
        let keep: &[&str] = match self {
            Family::LogChain => &["log-product"],
            Family::SinChain => &["sin-sum", "cos-sum"],
        };
        let category = match self {
            Family::LogChain => Category::LogExp,
            Family::SinChain => Category::Trig,
        };
        let mut rules: Vec<RewriteRule> = builtin_rules(&[category])
            .expect("built-in category")
            .into_iter()
            .filter(|r| keep.contains(&r.name()))
            .collect();
        rules.extend(builtin_rules(&[Category::Associative]).expect("built-in category"));
        rules
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryRow {
    pub n: u32,
    pub egraph_bytes: usize,
    pub egraph_nodes: usize,
    pub egraph_classes: usize,
    pub saturated: bool,
    /// Bytes needed to store every variant separately; `None` when the
    /// variants could not be enumerated within [`TERM_CAP`].
    pub explicit_bytes: Option<usize>,
    pub variants: Option<usize>,
}

fn term_bytes(e: &Expr) -> usize {
    let mut out = Vec::new();
    for t in e.preorder() {
        encode_op(t.op(), &mut out);
    }
    out.len()
}

/// Distinct terms in the root class, identified up to reassociation of
/// `+` and `·`. `None` when enumeration exceeds [`TERM_CAP`].
pub fn variants(expr: &Expr, rules: &[RewriteRule], limits: &Limits) -> Option<BTreeSet<Expr>> {
    let (g, _) = equality_saturation(expr, rules, limits);
    let depth = 2 * expr.size() + 2;
    let terms = g.enumerate_terms(g.root()?, depth, TERM_CAP)?;
    Some(terms.iter().map(Expr::flatten_assoc).collect())
}

pub fn memory_row(family: Family, n: u32, limits: &Limits) -> MemoryRow {
    let expr = family.expression(n);
    let rules = family.rules();
    let (g, report) = equality_saturation(&expr, &rules, limits);
    let found = variants(&expr, &rules, limits);
    MemoryRow {
        n,
        egraph_bytes: g.encode_compact().len(),
        egraph_nodes: report.nodes,
        egraph_classes: report.classes,
        saturated: report.saturated,
        explicit_bytes: found.as_ref().map(|v| v.iter().map(term_bytes).sum()),
        variants: found.map(|v| v.len()),
    }
}

pub fn memory_bench(family: Family, ns: impl IntoIterator<Item = u32>, limits: &Limits) -> Vec<MemoryRow> {
    ns.into_iter().map(|n| memory_row(family, n, limits)).collect()
}

pub fn to_csv(rows: &[MemoryRow]) -> String {
    let mut out = String::from("n,egraph_bytes,egraph_nodes,egraph_classes,saturated,explicit_bytes,variants\n");
    let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n,
            r.egraph_bytes,
            r.egraph_nodes,
            r.egraph_classes,
            r.saturated,
            opt(r.explicit_bytes),
            opt(r.variants)
        );
    }
    out
}

/// Least-squares line through `(x, y)`: slope, intercept and R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_shapes() {
        assert_eq!(Family::LogChain.expression(1).to_sequence().to_string(), "A->log(A), A->x1");
        assert_eq!(
            Family::SinChain.expression(3).to_sequence().to_string(),
            "A->sin(A), A->(A+A), A->x1, A->(A+A), A->x2, A->x3"
        );
    }

    #[test]
    fn single_variable_has_one_variant() {
        let row = memory_row(Family::LogChain, 1, &Limits::default());
        assert_eq!(row.variants, Some(1));
        assert!(row.saturated);
    }

    #[test]
    fn perfect_line() {
        let (s, b, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((s - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
