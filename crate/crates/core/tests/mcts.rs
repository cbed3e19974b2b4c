use eggsr::dataopt::data_oracle;
use eggsr::mcts::{run_mcts, MctsConfig, NodeId, SearchTree};
use eggsr::rewrite::{builtin_rules, Category};
use eggsr::{Expr, Grammar, Limits, RuleSequence};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grammar() -> Grammar {
    Grammar::parse("A->(A+A)\nA->A*A\nA->log(A)\nA->x1\nA->x2\nA->const").unwrap()
}

fn seq(text: &str) -> RuleSequence {
    text.parse().unwrap()
}

fn assert_conserved(tree: &SearchTree) {
    for (id, node) in tree.nodes().iter().enumerate() {
        let edges: u64 = node.children().keys().map(|&r| node.edge(r).map_or(0, |e| e.visits)).sum();
        assert_eq!(node.visits(), edges + node.simulations(), "node {id}");
    }
}

/// One select/expand/backprop round with rewards drawn from `rng`.
fn step(tree: &mut SearchTree, c: f64, rng: &mut ChaCha8Rng, egg: Option<&[eggsr::RewriteRule]>) {
    let leaf = tree.select(c);
    let node = tree.node(leaf);
    let targets: Vec<NodeId> = if node.is_terminal() || !node.children().is_empty() {
        vec![leaf]
    } else {
        let kids = tree.expand(leaf).unwrap();
        if kids.is_empty() { vec![leaf] } else { kids }
    };
    for id in targets {
        let r = rng.random_range(0.0..1.0);
        match egg {
            Some(rules) => {
                let mut walk = ChaCha8Rng::seed_from_u64(id as u64);
                tree.egg_backpropagate(id, r, rules, 4, &Limits::default(), &mut walk).unwrap();
            }
            None => tree.backpropagate(id, r).unwrap(),
        }
        tree.close(id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn visits_are_conserved(seed in 0u64..10_000, egg in any::<bool>(), depth in 2usize..7) {
        let rules = builtin_rules(&[Category::Commutative, Category::LogExp]).unwrap();
        let mut tree = SearchTree::new(grammar(), depth);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..40 {
            if tree.node(tree.root()).is_exhausted() {
                break;
            }
            step(&mut tree, 1.0, &mut rng, egg.then_some(rules.as_slice()));
            assert_conserved(&tree);
        }
    }

    /// UCT with rewards and c both scaled by a > 0 is a scaled copy of the
    /// original, so every descent picks the same child.
    #[test]
    fn selection_is_scale_invariant(seed in 0u64..10_000, k in -6i32..7, c in 0.0f64..3.0) {
        let a = 2f64.powi(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plain = SearchTree::new(grammar(), 6);
        let mut scaled = SearchTree::new(grammar(), 6);
        for _ in 0..30 {
            let leaf = plain.select(c);
            prop_assert_eq!(scaled.select(a * c), leaf);
            let targets = if plain.node(leaf).is_terminal() || !plain.node(leaf).children().is_empty() {
                vec![leaf]
            } else {
                let kids = plain.expand(leaf).unwrap();
                prop_assert_eq!(scaled.expand(leaf).unwrap(), kids.clone());
                kids
            };
            for id in targets {
                // power-of-two scaling is exact, so scores compare identically
                let r = rng.random_range(0..64) as f64 / 64.0;
                plain.backpropagate(id, r).unwrap();
                scaled.backpropagate(id, a * r).unwrap();
                plain.close(id);
                scaled.close(id);
            }
        }
    }
}

#[test]
fn equivalent_paths_receive_identical_increments() {
    let rules: Vec<_> = builtin_rules(&[Category::LogExp])
        .unwrap()
        .into_iter()
        .filter(|r| r.name().starts_with("log-product"))
        .collect();
    let mut tree = SearchTree::new(grammar(), 10);
    let p1 = tree.insert_path(&seq("A->log(A), A->A*A, A->x1")).unwrap();
    let p2 = tree.insert_path(&seq("A->(A+A), A->log(A), A->x1, A->log(A)")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rewards = [0.31, 0.77, 0.125, 0.9];
    for &r in &rewards {
        let updated = tree.egg_backpropagate(p1, r, &rules, 8, &Limits::default(), &mut rng).unwrap();
        assert_eq!(updated, 2);
    }

    // replay the same update stream on a plain tree for each path alone
    let mut replay = SearchTree::new(grammar(), 10);
    let q1 = replay.insert_path(&tree.path(p1)).unwrap();
    let q2 = replay.insert_path(&tree.path(p2)).unwrap();
    for &r in &rewards {
        replay.backpropagate(q1, r).unwrap();
        replay.backpropagate(q2, r).unwrap();
    }
    for (a, b) in [(p1, q1), (p2, q2)] {
        let (pa, pb) = (tree.node(a).parent().unwrap(), replay.node(b).parent().unwrap());
        let rule = tree.node(a).rule().unwrap();
        assert_eq!(tree.node(pa).edge(rule), replay.node(pb).edge(rule));
        assert_eq!(tree.node(a).visits(), rewards.len() as u64);
    }
    let e1 = tree.node(tree.node(p1).parent().unwrap()).edge(tree.node(p1).rule().unwrap()).unwrap();
    let e2 = tree.node(tree.node(p2).parent().unwrap()).edge(tree.node(p2).rule().unwrap()).unwrap();
    assert_eq!(e1.reward_sum, e2.reward_sum);
    assert_eq!(e1.visits, e2.visits);
    assert_conserved(&tree);
}

#[test]
fn search_is_seeded_and_finds_linear_truth() {
    let data = data_oracle(&Expr::parse_sequence("A->A*A, A->const, A->x1").unwrap(), &[2.5], 128, &[], 0.0, 0)
        .unwrap();
    let cfg = MctsConfig { iterations: 200, max_depth: 6, ..MctsConfig::default() };
    let a = run_mcts(&cfg, &grammar(), &data, &[]);
    let b = run_mcts(&cfg, &grammar(), &data, &[]);
    assert_eq!(a.trace, b.trace);
    assert!(a.best_fit.nmse < 1e-6, "{}", a.best_fit.nmse);
    assert!(a.trace.windows(2).all(|w| w[0].tree_nodes <= w[1].tree_nodes));
}

#[test]
fn egg_search_updates_at_least_one_path_per_iteration() {
    let rules = builtin_rules(&[Category::Commutative]).unwrap();
    let data = data_oracle(&Expr::parse_sequence("A->(A+A), A->x1, A->x2").unwrap(), &[], 64, &[], 0.0, 0).unwrap();
    let cfg = MctsConfig { iterations: 30, max_depth: 5, egg: true, ..MctsConfig::default() };
    let r = run_mcts(&cfg, &grammar(), &data, &rules);
    assert!(r.trace.iter().all(|row| row.updated_paths >= 1));
}
