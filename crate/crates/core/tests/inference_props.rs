mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;
use stagedtrees::inference::{
    condition_hard, condition_soft, joint_table, marginal, mutual_information, soft_conditioned_joint, whatif_sweep,
    EvidenceSpec,
};
use stagedtrees::{Error, StagedTree};

fn random_evidence(r: &mut rand_chacha::ChaCha8Rng, t: &StagedTree) -> BTreeMap<usize, usize> {
    let p = t.schema().len();
    let mut ev = BTreeMap::new();
    for v in 0..p {
        if r.gen_bool(0.4) {
            ev.insert(v, r.gen_range(0..t.schema().n_levels(v)));
        }
    }
    ev
}

#[test]
fn hard_evidence_matches_joint_slice() {
    let mut r = common::rng(11);
    let mut checked = 0;
    while checked < 100 {
        let t = common::random_tree(&mut r, 4, 3, true);
        let ev = random_evidence(&mut r, &t);
        let pairs: Vec<(usize, usize)> = ev.iter().map(|(&a, &b)| (a, b)).collect();
        match (condition_hard(&t, &ev), common::brute_condition(&t, &pairs)) {
            (Ok(res), Some(expected)) => {
                for (got, want) in res.marginals.iter().zip(&expected) {
                    for (a, b) in got.iter().zip(want) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
                checked += 1;
            }
            (Err(Error::ImpossibleEvidence(_)), None) => {}
            (got, want) => panic!("mismatch: {got:?} vs {want:?}"),
        }
    }
}

#[test]
fn evidence_on_everything_is_a_point_mass() {
    let mut r = common::rng(3);
    let t = common::random_tree(&mut r, 4, 3, false);
    let x: Vec<usize> = (0..t.schema().len()).map(|v| r.gen_range(0..t.schema().n_levels(v))).collect();
    let ev: BTreeMap<usize, usize> = x.iter().copied().enumerate().collect();
    let res = condition_hard(&t, &ev).unwrap();
    for (v, m) in res.marginals.iter().enumerate() {
        for (l, &p) in m.iter().enumerate() {
            assert_eq!(p, if l == x[v] { 1.0 } else { 0.0 });
        }
    }
    assert!((res.evidence_probability.unwrap() - t.atom_probability(&x).unwrap()).abs() < 1e-15);
}

#[test]
fn soft_fixed_point_and_jeffrey() {
    let mut r = common::rng(5);
    for _ in 0..20 {
        let t = common::random_tree(&mut r, 4, 3, false);
        let v = r.gen_range(0..t.schema().len());
        let prior = joint_table(&t).unwrap();

        let current = marginal(&t, v).unwrap();
        let ev = EvidenceSpec::new(t.schema(), BTreeMap::new(), BTreeMap::from([(v, current.clone())])).unwrap();
        let (joint, res) = soft_conditioned_joint(&t, &ev, 1e-9, 1000).unwrap();
        assert_eq!(res.iterations, Some(0));
        let dev = joint.probs().iter().zip(prior.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-9);

        let q = common::random_distribution(&mut r, t.schema().n_levels(v), false);
        let ev = EvidenceSpec::new(t.schema(), BTreeMap::new(), BTreeMap::from([(v, q.clone())])).unwrap();
        let (joint, res) = soft_conditioned_joint(&t, &ev, 1e-9, 1000).unwrap();
        assert!(res.iterations.unwrap() <= 1);
        // P'(x) = P(x | x_v) q(x_v)
        for (atom, &p) in prior.probs().iter().enumerate() {
            let l = prior.level(atom, v);
            let expected = p / current[l] * q[l];
            assert!((joint.probs()[atom] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn two_soft_findings_on_independent_variables() {
    let schema = common::schema_with_levels(&[2, 3]);
    let t = StagedTree::new(
        schema,
        stagedtrees::VariableOrder::identity(2),
        vec![stagedtrees::StageAssignment::single(1), stagedtrees::StageAssignment::single(2)],
        vec![vec![vec![0.3, 0.7]], vec![vec![0.2, 0.3, 0.5]]],
    )
    .unwrap();
    let qa = vec![0.6, 0.4];
    let qb = vec![0.1, 0.1, 0.8];
    let ev = EvidenceSpec::new(t.schema(), BTreeMap::new(), BTreeMap::from([(0, qa.clone()), (1, qb.clone())])).unwrap();
    let (joint, _) = soft_conditioned_joint(&t, &ev, 1e-12, 1000).unwrap();
    for a in 0..2 {
        for b in 0..3 {
            assert!((joint.probs()[joint.atom_index(&[a, b])] - qa[a] * qb[b]).abs() < 1e-12);
        }
    }
}

#[test]
fn soft_update_preserves_conditionals() {
    let mut r = common::rng(8);
    for _ in 0..10 {
        let t = common::random_tree(&mut r, 4, 3, false);
        let p = t.schema().len();
        let v = r.gen_range(0..p);
        let q = common::random_distribution(&mut r, t.schema().n_levels(v), false);
        let ev = EvidenceSpec::new(t.schema(), BTreeMap::new(), BTreeMap::from([(v, q)])).unwrap();
        let (post, _) = soft_conditioned_joint(&t, &ev, 1e-12, 1000).unwrap();
        let prior = joint_table(&t).unwrap();
        let (pm, qm) = (prior.marginal_mass(v), post.marginal_mass(v));
        for atom in 0..prior.len() {
            let l = prior.level(atom, v);
            assert!((prior.probs()[atom] / pm[l] - post.probs()[atom] / qm[l]).abs() < 1e-9);
        }
    }
}

#[test]
fn soft_target_on_impossible_level_is_rejected() {
    let schema = common::schema_with_levels(&[2]);
    let t = StagedTree::new(
        schema,
        stagedtrees::VariableOrder::identity(1),
        vec![stagedtrees::StageAssignment::single(1)],
        vec![vec![vec![1.0, 0.0]]],
    )
    .unwrap();
    let ev = EvidenceSpec::new(t.schema(), BTreeMap::new(), BTreeMap::from([(0, vec![0.5, 0.5])])).unwrap();
    assert!(matches!(condition_soft(&t, &ev, 1e-9, 100), Err(Error::ImpossibleEvidence(_))));
}

#[test]
fn whatif_binary_predictor_delta() {
    let mut r = common::rng(21);
    for _ in 0..10 {
        let t = common::random_tree(&mut r, 4, 2, false);
        let target = 0;
        let pred = 1;
        let sweep = whatif_sweep(&t, target, &[pred]).unwrap();
        let c0 = common::brute_condition(&t, &[(pred, 0)]).unwrap();
        let c1 = common::brute_condition(&t, &[(pred, 1)]).unwrap();
        for row in &sweep.rows {
            let l = row.target_level;
            assert!((row.max_abs_change - (c1[target][l] - c0[target][l]).abs()).abs() < 1e-12);
        }
    }
}

#[test]
fn sweep_rejects_target_among_predictors() {
    let mut r = common::rng(2);
    let t = common::random_tree(&mut r, 3, 2, false);
    assert!(whatif_sweep(&t, 0, &[0]).is_err());
}

fn tree_strategy() -> impl Strategy<Value = StagedTree> {
    any::<u64>().prop_map(|seed| common::random_tree(&mut common::rng(seed), 4, 3, false))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_marginals_sum_to_one(t in tree_strategy(), seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let ev = random_evidence(&mut r, &t);
        if let Ok(res) = condition_hard(&t, &ev) {
            for m in &res.marginals {
                prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mutual_information_symmetric_nonnegative(t in tree_strategy()) {
        let p = t.schema().len();
        for a in 0..p {
            for b in 0..p {
                let ab = mutual_information(&t, a, b).unwrap();
                let ba = mutual_information(&t, b, a).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert!((ab - ba).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_marginal_matches_joint(t in tree_strategy()) {
        let joint = joint_table(&t).unwrap();
        for v in 0..t.schema().len() {
            let a = marginal(&t, v).unwrap();
            let b = joint.marginal(v);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn certain_evidence_changes_nothing(seed in any::<u64>()) {
        // A variable forced to one level: observing that level leaves other marginals intact.
        let mut r = common::rng(seed);
        let t = common::random_tree(&mut r, 3, 3, false);
        let root = t.variable_at(0);
        let l = t.n_levels_at(0);
        let mut probs: Vec<Vec<Vec<f64>>> = (0..t.depth())
            .map(|j| (0..t.staging(j).n_stages()).map(|s| t.stage_probs(j, s).to_vec()).collect())
            .collect();
        probs[0][0] = (0..l).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let forced = StagedTree::new(t.schema().clone(), t.order().clone(), t.stagings().to_vec(), probs).unwrap();
        let res = condition_hard(&forced, &BTreeMap::from([(root, 0)])).unwrap();
        for v in 0..forced.schema().len() {
            let prior = marginal(&forced, v).unwrap();
            for (a, b) in prior.iter().zip(&res.marginals[v]) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
