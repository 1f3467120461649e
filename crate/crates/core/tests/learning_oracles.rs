mod common;

use proptest::prelude::*;
use stagedtrees::aldag::compress;
use stagedtrees::context::{ContextCounts, ContextSpace};
use stagedtrees::learning::{
    bhc, bhc_stage_depth, bhc_stage_depth_traced, cmi, exhaustive_stage, kparents_learn, learn_tree, order_search,
    order_search_dp, order_search_exhaustive, order_search_grouped, staging_score, LearnConfig, OrderSearchConfig,
    OrderSearchMode,
};
use stagedtrees::staged_tree::saturated_tree;
use stagedtrees::{Dataset, FitConfig, StageAssignment, VariableOrder};

fn depth_score(d: &Dataset, order: &VariableOrder, depth: usize, st: &StageAssignment) -> f64 {
    let space = ContextSpace::new(&order.as_slice()[..depth], &d.schema().level_counts()).unwrap();
    let counts = ContextCounts::tabulate(d, &space, order.as_slice()[depth]);
    staging_score(&counts, st, 0.0, d.n_rows())
}

fn merge(st: &StageAssignment, a: usize, b: usize) -> StageAssignment {
    let labels: Vec<usize> = st.as_slice().iter().map(|&s| if s == b { a } else { s }).collect();
    StageAssignment::from_labels(&labels)
}

#[test]
fn exhaustive_beats_or_ties_bhc_and_bhc_is_local_optimum() {
    let mut r = common::rng(101);
    for _ in 0..10 {
        let truth = common::random_tree(&mut r, 3, 2, false);
        let levels = truth.schema().level_counts();
        if levels.len() != 3 {
            continue;
        }
        let d = truth.sample(200, &mut r).unwrap();
        let order = VariableOrder::identity(d.n_vars());
        for depth in 0..3 {
            let ex = exhaustive_stage(&d, &order, depth, 0.0).unwrap();
            let hc = bhc_stage_depth(&d, &order, depth, 0.0).unwrap();
            let (se, sh) = (depth_score(&d, &order, depth, &ex), depth_score(&d, &order, depth, &hc));
            assert!(se <= sh + 1e-9, "exhaustive {se} > bhc {sh}");
            for a in 0..hc.n_stages() {
                for b in a + 1..hc.n_stages() {
                    assert!(depth_score(&d, &order, depth, &merge(&hc, a, b)) >= sh - 1e-9);
                }
            }
        }
    }
}

#[test]
fn bhc_trajectory_decreases() {
    let mut r = common::rng(7);
    let d = common::structured_dataset(&mut r, 4, 300);
    let order = VariableOrder::identity(4);
    for depth in 0..4 {
        let out = bhc_stage_depth_traced(&d, &order, depth, 0.0).unwrap();
        for w in out.trajectory.windows(2) {
            assert!(w[1] < w[0]);
        }
    }
}

#[test]
fn identical_context_counts_are_merged() {
    // X2 copies nothing from X1: both contexts of X1 see the same X2 distribution.
    let rows: Vec<Vec<usize>> = (0..400).map(|i| vec![i % 2, (i / 2) % 2]).collect();
    let d = Dataset::from_rows(common::schema_with_levels(&[2, 2]), &rows).unwrap();
    let t = bhc(&d, &VariableOrder::identity(2), 0.0).unwrap();
    assert_eq!(t.staging(1).n_stages(), 1);
}

#[test]
fn learned_bic_never_worse_than_saturated() {
    let mut r = common::rng(17);
    for _ in 0..5 {
        let d = common::structured_dataset(&mut r, 4, 250);
        let order = VariableOrder::identity(4);
        let learned = bhc(&d, &order, 0.0).unwrap().bic(&d).unwrap();
        let sat = saturated_tree(d.schema(), &order).unwrap().fit(&d, FitConfig::MLE).unwrap().bic(&d).unwrap();
        assert!(learned <= sat + 1e-9);
    }
}

#[test]
fn dp_equals_factorial_enumeration() {
    let mut r = common::rng(23);
    let cfg = LearnConfig::bhc();
    for _ in 0..5 {
        let d = common::structured_dataset(&mut r, 4, 200);
        let dp = order_search_dp(&d, &cfg, None).unwrap();
        let mut best = f64::INFINITY;
        let mut scores = Vec::new();
        for perm in common::all_orders(4) {
            let o = VariableOrder::new(perm).unwrap();
            let s = learn_tree(&d, &o, &cfg).unwrap().tree.bic(&d).unwrap();
            best = best.min(s);
            scores.push((o, s));
        }
        assert_eq!(dp.score, best);
        let dp_tree_score = learn_tree(&d, &dp.order, &cfg).unwrap().tree.bic(&d).unwrap();
        assert_eq!(dp_tree_score, best);
        assert_eq!(order_search_exhaustive(&d, &cfg, None).unwrap().score, best);
        // Lexicographically smallest optimal order.
        let first = scores.iter().find(|(_, s)| *s == best).unwrap();
        assert_eq!(&first.0, &dp.order);
    }
}

#[test]
fn dp_with_fixed_last_and_grouped() {
    let mut r = common::rng(29);
    let d = common::structured_dataset(&mut r, 4, 200);
    let cfg = LearnConfig::bhc();
    let fixed = order_search_dp(&d, &cfg, Some(2)).unwrap();
    assert_eq!(*fixed.order.as_slice().last().unwrap(), 2);
    let mut best = f64::INFINITY;
    for perm in common::all_orders(4).into_iter().filter(|p| p[3] == 2) {
        best = best.min(learn_tree(&d, &VariableOrder::new(perm).unwrap(), &cfg).unwrap().tree.bic(&d).unwrap());
    }
    assert_eq!(fixed.score, best);

    let g = order_search_grouped(&d, &[vec![0, 1], vec![2, 3]], &cfg).unwrap();
    let o = g.order.as_slice();
    let block = |v: usize| o.iter().position(|&x| x == v).unwrap() / 2;
    assert_eq!(block(0), block(1));
    assert_eq!(block(2), block(3));
    let search = OrderSearchConfig {
        mode: OrderSearchMode::Grouped(vec![vec![0, 1], vec![2, 3]]),
        ..OrderSearchConfig::default()
    };
    assert_eq!(order_search(&d, &cfg, &search).unwrap().order, g.order);
}

#[test]
fn kparents_in_degree_bound() {
    let mut r = common::rng(31);
    for _ in 0..4 {
        let truth = common::random_tree(&mut r, 5, 2, false);
        let d = truth.sample(300, &mut r).unwrap();
        let order = VariableOrder::identity(d.n_vars());
        for k in 1..=3 {
            let lt = kparents_learn(&d, &order, k, 0.0).unwrap();
            let g = compress(&lt.tree);
            assert!(g.max_in_degree() <= k);
            for e in &g.edges {
                assert!(lt.parent_sets[e.to].contains(&e.from));
            }
        }
    }
}

#[test]
fn cmi_matches_triple_sum() {
    let mut r = common::rng(37);
    for _ in 0..20 {
        let truth = common::random_tree(&mut r, 4, 3, false);
        let d = truth.sample(120, &mut r).unwrap();
        let p = d.n_vars();
        let cond: Vec<usize> = (2..p).collect();
        let got = cmi(&d, 0, 1, &cond).unwrap();
        let want = common::triple_sum_cmi(&d, 0, 1, &cond);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn larger_k_never_scores_worse() {
    let mut r = common::rng(41);
    for _ in 0..10 {
        let d = common::structured_dataset(&mut r, 5, 300);
        let order = VariableOrder::identity(5);
        let scores: Vec<f64> = (1..=4)
            .map(|k| kparents_learn(&d, &order, k, 0.0).unwrap().tree.bic(&d).unwrap())
            .collect();
        for w in scores.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{scores:?}");
        }
    }
}

#[test]
fn kparents_without_binding_bound_is_bhc() {
    let mut r = common::rng(43);
    let d = common::structured_dataset(&mut r, 4, 300);
    let order = VariableOrder::identity(4);
    let full = bhc(&d, &order, 0.0).unwrap();
    let k3 = kparents_learn(&d, &order, 3, 0.0).unwrap().tree;
    assert_eq!(full.stagings(), k3.stagings());
}

#[test]
fn chain_selects_direct_parent() {
    use rand::Rng;
    let mut r = common::rng(47);
    let rows: Vec<Vec<usize>> = (0..5000)
        .map(|_| {
            let x1 = r.gen_bool(0.5) as usize;
            let x2 = if r.gen_bool(0.85) { x1 } else { 1 - x1 };
            let x3 = if r.gen_bool(0.8) { x2 } else { 1 - x2 };
            vec![x1, x2, x3]
        })
        .collect();
    let d = Dataset::from_rows(common::schema_with_levels(&[2, 2, 2]), &rows).unwrap();
    let lt = kparents_learn(&d, &VariableOrder::identity(3), 1, 0.0).unwrap();
    assert_eq!(lt.parent_sets[2], vec![1]);
}

#[test]
fn two_stage_truth_is_recovered() {
    use rand::Rng;
    let mut r = common::rng(53);
    // Contexts of (X1, X2): {00, 11} favour X3=0, {01, 10} favour X3=1.
    let rows: Vec<Vec<usize>> = (0..5000)
        .map(|_| {
            let (a, b) = (r.gen_bool(0.5) as usize, r.gen_bool(0.5) as usize);
            let p1 = if a == b { 0.1 } else { 0.9 };
            vec![a, b, r.gen_bool(p1) as usize]
        })
        .collect();
    let d = Dataset::from_rows(common::schema_with_levels(&[2, 2, 2]), &rows).unwrap();
    let st = bhc_stage_depth(&d, &VariableOrder::identity(3), 2, 0.0).unwrap();
    assert_eq!(st.as_slice(), &[0, 1, 1, 0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cmi_nonnegative_and_symmetric(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let d = common::random_dataset(&mut r, &[2, 3, 2], 60);
        let a = cmi(&d, 0, 1, &[2]).unwrap();
        let b = cmi(&d, 1, 0, &[2]).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn staging_scores_do_not_depend_on_order_of_predecessors(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let d = common::structured_dataset(&mut r, 4, 150);
        let cfg = LearnConfig::bhc();
        let a = learn_tree(&d, &VariableOrder::new(vec![0, 1, 2, 3]).unwrap(), &cfg).unwrap();
        let b = learn_tree(&d, &VariableOrder::new(vec![1, 0, 2, 3]).unwrap(), &cfg).unwrap();
        prop_assert_eq!(a.tree.depth_n_parameters(2), b.tree.depth_n_parameters(2));
        prop_assert_eq!(a.tree.depth_n_parameters(3), b.tree.depth_n_parameters(3));
    }

    #[test]
    fn bhc_output_is_fitted_and_normalized(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let d = common::random_dataset(&mut r, &[2, 3, 2], 80);
        let t = bhc(&d, &VariableOrder::identity(3), 0.0).unwrap();
        for j in 0..t.depth() {
            for s in 0..t.staging(j).n_stages() {
                prop_assert!((t.stage_probs(j, s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let ll: f64 = t.depth_log_likelihoods(&d).unwrap().iter().sum();
        prop_assert!((ll - t.log_likelihood(&d).unwrap()).abs() <= 1e-9 * ll.abs());
    }
}

#[test]
fn independent_columns_have_small_cmi() {
    let mut r = common::rng(59);
    let d = common::random_dataset(&mut r, &[2, 2, 3], 10_000);
    assert!(cmi(&d, 0, 1, &[2]).unwrap() < 0.01);
    assert!(cmi(&d, 0, 1, &[]).unwrap() < 0.01);
}
