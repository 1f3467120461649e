//! Random generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagedtrees::{Dataset, Schema, StageAssignment, StagedTree, Variable, VariableOrder};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn schema_with_levels(levels: &[usize]) -> Schema {
    Schema::new(
        levels
            .iter()
            .enumerate()
            .map(|(i, &l)| Variable::new(format!("X{}", i + 1), (0..l).map(|k| format!("v{k}"))))
            .collect(),
    )
    .unwrap()
}

pub fn random_distribution(r: &mut ChaCha8Rng, n: usize, allow_zero: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| if allow_zero && r.gen_bool(0.15) { 0.0 } else { r.gen_range(0.05..1.0) })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let t: f64 = w.iter().sum();
    w.iter().map(|x| x / t).collect()
}

/// A tree with random order, random stagings and random stage probabilities.
pub fn random_tree(r: &mut ChaCha8Rng, max_vars: usize, max_levels: usize, allow_zero: bool) -> StagedTree {
    let p = r.gen_range(2..=max_vars);
    random_tree_with(r, p, max_levels, allow_zero)
}

/// As [`random_tree`] with exactly `p` variables.
pub fn random_tree_with(r: &mut ChaCha8Rng, p: usize, max_levels: usize, allow_zero: bool) -> StagedTree {
    let levels: Vec<usize> = (0..p).map(|_| r.gen_range(2..=max_levels)).collect();
    let schema = schema_with_levels(&levels);
    let mut perm: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        perm.swap(i, r.gen_range(0..=i));
    }
    let order = VariableOrder::new(perm).unwrap();
    let mut n_contexts = 1;
    let mut stagings = Vec::new();
    let mut probs = Vec::new();
    for j in 0..p {
        let v = order.as_slice()[j];
        let k = r.gen_range(1..=n_contexts.min(4));
        let labels: Vec<usize> = (0..n_contexts).map(|_| r.gen_range(0..k)).collect();
        let st = StageAssignment::from_labels(&labels);
        probs.push((0..st.n_stages()).map(|_| random_distribution(r, levels[v], allow_zero)).collect());
        stagings.push(st);
        n_contexts *= levels[v];
    }
    StagedTree::new(schema, order, stagings, probs).unwrap()
}

/// Samples a dataset from a tree, redrawing until every level of every variable appears.
pub fn sample_complete(tree: &StagedTree, n: usize, r: &mut ChaCha8Rng) -> Dataset {
    loop {
        let d = tree.sample(n, r).unwrap();
        let ok = (0..d.n_vars()).all(|v| {
            let mut seen = vec![false; d.schema().n_levels(v)];
            for i in 0..d.n_rows() {
                seen[d.get(i, v)] = true;
            }
            seen.iter().all(|&s| s)
        });
        if ok {
            return d;
        }
    }
}

/// Dataset with independent uniform columns.
pub fn random_dataset(r: &mut ChaCha8Rng, levels: &[usize], n: usize) -> Dataset {
    let rows: Vec<Vec<usize>> = (0..n).map(|_| levels.iter().map(|&l| r.gen_range(0..l)).collect()).collect();
    Dataset::from_rows(schema_with_levels(levels), &rows).unwrap()
}

/// Dataset with a chain of noisy copies plus some context-specific structure.
pub fn structured_dataset(r: &mut ChaCha8Rng, p: usize, n: usize) -> Dataset {
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut x = vec![0usize; p];
            x[0] = r.gen_bool(0.4) as usize;
            for v in 1..p {
                let flip = if x[v - 1] == 1 { 0.15 } else { 0.45 };
                x[v] = if r.gen_bool(flip) { 1 - x[v - 1] } else { x[v - 1] };
            }
            x
        })
        .collect();
    Dataset::from_rows(schema_with_levels(&vec![2; p]), &rows).unwrap()
}

/// All assignments of the schema in schema order, first variable most significant.
pub fn all_atoms(levels: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &l in levels {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..l).map(move |v| {
                    let mut x = prefix.clone();
                    x.push(v);
                    x
                })
            })
            .collect();
    }
    out
}

/// Path product computed directly from stagings and stage probabilities.
pub fn brute_atom_probability(tree: &StagedTree, x: &[usize]) -> f64 {
    let order = tree.order().as_slice();
    let levels = tree.schema().level_counts();
    let mut p = 1.0;
    let mut context = 0;
    for (j, &v) in order.iter().enumerate() {
        let stage = tree.staging(j).as_slice()[context];
        p *= tree.stage_probs(j, stage)[x[v]];
        context = context * levels[v] + x[v];
    }
    p
}

/// Brute-force joint as (assignment, probability) pairs.
pub fn brute_joint(tree: &StagedTree) -> Vec<(Vec<usize>, f64)> {
    all_atoms(&tree.schema().level_counts())
        .into_iter()
        .map(|x| {
            let p = brute_atom_probability(tree, &x);
            (x, p)
        })
        .collect()
}

/// Posterior marginals by slicing the brute-force joint; `None` when the evidence is impossible.
pub fn brute_condition(tree: &StagedTree, evidence: &[(usize, usize)]) -> Option<Vec<Vec<f64>>> {
    let levels = tree.schema().level_counts();
    let mut m: Vec<Vec<f64>> = levels.iter().map(|&l| vec![0.0; l]).collect();
    let mut total = 0.0;
    for (x, p) in brute_joint(tree) {
        if evidence.iter().all(|&(v, l)| x[v] == l) {
            total += p;
            for (v, &xv) in x.iter().enumerate() {
                m[v][xv] += p;
            }
        }
    }
    if total <= 0.0 {
        return None;
    }
    for row in m.iter_mut() {
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    Some(m)
}

/// Conditional mutual information by the triple sum over empirical frequencies.
pub fn triple_sum_cmi(d: &Dataset, i: usize, s: usize, cond: &[usize]) -> f64 {
    use std::collections::HashMap;
    let n = d.n_rows() as f64;
    let mut xyz: HashMap<(usize, usize, Vec<usize>), f64> = HashMap::new();
    let mut xz: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
    let mut yz: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
    let mut z: HashMap<Vec<usize>, f64> = HashMap::new();
    for r in 0..d.n_rows() {
        let zc: Vec<usize> = cond.iter().map(|&c| d.get(r, c)).collect();
        let (x, y) = (d.get(r, i), d.get(r, s));
        *xyz.entry((x, y, zc.clone())).or_default() += 1.0;
        *xz.entry((x, zc.clone())).or_default() += 1.0;
        *yz.entry((y, zc.clone())).or_default() += 1.0;
        *z.entry(zc).or_default() += 1.0;
    }
    let mut total = 0.0;
    for ((x, y, zc), nxyz) in &xyz {
        let pxyz = nxyz / n;
        let pz = z[zc] / n;
        let pxz = xz[&(*x, zc.clone())] / n;
        let pyz = yz[&(*y, zc.clone())] / n;
        total += pxyz * ((pz * pxyz) / (pxz * pyz)).ln();
    }
    total.max(0.0)
}

/// Every permutation of `0..p` in lexicographic order.
pub fn all_orders(p: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                prefix.push(v);
                rec(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; p], &mut out);
    out
}

/// Co-membership disagreement fraction counted pair by pair.
pub fn hand_dissimilarity(stagings: &[Vec<usize>], a: usize, b: usize) -> f64 {
    let differ = stagings.iter().filter(|s| s[a] != s[b]).count();
    differ as f64 / stagings.len() as f64
}
