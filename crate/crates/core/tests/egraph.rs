use eggsr::egraph::{ast_size, equality_saturation, ENode, Id};
use eggsr::grammar::Op;
use eggsr::rewrite::{builtin_rules, Category};
use eggsr::{EGraph, Expr, Limits};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Naive union-find without ranks, used only by the oracle.
struct Naive(Vec<usize>);

impl Naive {
    fn find(&self, mut i: usize) -> usize {
        while self.0[i] != i {
            i = self.0[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        self.0[a.max(b)] = a.min(b);
        true
    }
}

/// Congruence closure by repeated all-pairs scans.
fn oracle(nodes: &[(Op, Vec<usize>)], merges: &[(usize, usize)]) -> Naive {
    let mut uf = Naive((0..nodes.len()).collect());
    for &(a, b) in merges {
        uf.union(a, b);
    }
    loop {
        let mut changed = false;
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                let (oi, ci) = &nodes[i];
                let (oj, cj) = &nodes[j];
                if oi == oj
                    && ci.len() == cj.len()
                    && ci.iter().zip(cj).all(|(&a, &b)| uf.find(a) == uf.find(b))
                {
                    changed |= uf.union(i, j);
                }
            }
        }
        if !changed {
            return uf;
        }
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<(Op, Vec<usize>)>, Vec<(usize, usize)>) {
    let n = rng.random_range(1..=12);
    let mut nodes: Vec<(Op, Vec<usize>)> = Vec::new();
    for _ in 0..n {
        let choice = if nodes.is_empty() { 0 } else { rng.random_range(0..4) };
        let node = match choice {
            0 => (Op::Var(rng.random_range(1..=3)), vec![]),
            1 => (Op::Neg, vec![rng.random_range(0..nodes.len())]),
            2 => (Op::Add, vec![rng.random_range(0..nodes.len()), rng.random_range(0..nodes.len())]),
            _ => (Op::Mul, vec![rng.random_range(0..nodes.len()), rng.random_range(0..nodes.len())]),
        };
        nodes.push(node);
    }
    let m = rng.random_range(0..=20);
    let merges = (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
    (nodes, merges)
}

#[test]
fn rebuild_matches_quadratic_congruence_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..500 {
        let (nodes, merges) = random_case(&mut rng);
        let mut g = EGraph::new();
        let ids: Vec<Id> = nodes
            .iter()
            .scan(Vec::<Id>::new(), |made, (op, ch)| {
                let id = g.add(ENode::new(*op, ch.iter().map(|&c| made[c]).collect())).unwrap();
                made.push(id);
                Some(id)
            })
            .collect();
        for &(a, b) in &merges {
            g.merge(ids[a], ids[b]);
        }
        g.rebuild();
        let uf = oracle(&nodes, &merges);
        for i in 0..nodes.len() {
            for j in 0..nodes.len() {
                assert_eq!(
                    g.find(ids[i]) == g.find(ids[j]),
                    uf.find(i) == uf.find(j),
                    "case {case}: nodes {i},{j}"
                );
            }
        }
    }
}

fn arb_poly() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (1u32..=2).prop_map(Expr::var),
        (1i32..=3).prop_map(|v| Expr::lit(v as f64)),
    ];
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(Op::Add, a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::binary(Op::Mul, a, b)),
        ]
    })
}

fn limits() -> Limits {
    Limits { max_iter: 4, max_nodes: 3_000 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every term in the saturated root class evaluates like the original.
    #[test]
    fn saturation_is_sound(e in arb_poly(), x1 in 0.1f64..2.0, x2 in 0.1f64..2.0) {
        let rules = builtin_rules(&[Category::Commutative, Category::Associative, Category::Distributive]).unwrap();
        let (g, _) = equality_saturation(&e, &rules, &limits());
        let want = e.evaluate(&[x1, x2], &[]).unwrap();
        if let Some(terms) = g.enumerate_terms(g.root().unwrap(), e.depth() + 2, 2_000) {
            prop_assert!(terms.contains(&e));
            for t in terms {
                let got = t.evaluate(&[x1, x2], &[]).unwrap();
                prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{} vs {}", t, e);
            }
        }
    }

    /// Cost extraction agrees with the smallest enumerated term.
    #[test]
    fn extraction_matches_brute_force(e in arb_poly()) {
        let rules = builtin_rules(&[Category::Commutative, Category::Associative]).unwrap();
        let (g, _) = equality_saturation(&e, &rules, &limits());
        let root = g.root().unwrap();
        let (cost, best) = g.extract_best(root, &ast_size).unwrap();
        prop_assert_eq!(cost, best.size() as f64);
        // comm/assoc never change size, so depth ≤ size bounds every term
        if let Some(terms) = g.enumerate_terms(root, e.size(), 5_000) {
            let min = terms.iter().map(Expr::size).min().unwrap();
            prop_assert_eq!(cost, min as f64);
            prop_assert!(terms.contains(&best));
        }
    }

    /// Saturation only coarsens: subterms equal before stay equal after, and
    /// nothing is removed.
    #[test]
    fn saturation_coarsens(e in arb_poly()) {
        let rules = builtin_rules(&[Category::Commutative, Category::Distributive]).unwrap();
        let mut g = EGraph::from_expression(&e);
        let subterms: Vec<Expr> = e.preorder().into_iter().cloned().collect();
        let before: Vec<Id> = subterms.iter().map(|t| g.lookup_expr(t).unwrap()).collect();
        let nodes_before = g.node_count();
        g.saturate(&rules, &limits());
        prop_assert!(g.node_count() >= nodes_before);
        for i in 0..before.len() {
            prop_assert_eq!(g.lookup_expr(&subterms[i]).map(|id| g.find(id)), Some(g.find(before[i])));
            for j in 0..before.len() {
                if before[i] == before[j] {
                    prop_assert_eq!(g.find(before[i]), g.find(before[j]));
                }
            }
        }
    }

    #[test]
    fn commutativity_alone_never_adds_classes(e in arb_poly()) {
        let rules = builtin_rules(&[Category::Commutative]).unwrap();
        let mut g = EGraph::from_expression(&e);
        let classes = g.class_count();
        g.saturate(&rules, &limits());
        prop_assert!(g.class_count() <= classes);
    }
}
