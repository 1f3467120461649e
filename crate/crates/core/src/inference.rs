//! Exact queries on a fitted staged tree by path enumeration.
//!
//! The joint distribution is materialized as a dense table over all atoms (guarded by
//! [`MAX_ATOMS`]); hard evidence restricts it, soft evidence rescales it with
//! iterative proportional fitting (Jeffrey's rule for a single finding).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::context::ContextSpace;
use crate::dataset::Schema;
use crate::error::{Error, Result};
use crate::staged_tree::StagedTree;

pub const MAX_ATOMS: usize = 10_000_000;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Dense joint distribution indexed in schema order (first variable most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    radices: Vec<usize>,
    strides: Vec<usize>,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn from_tree(tree: &StagedTree) -> Result<Self> {
        let radices = tree.schema().level_counts();
        let total: u128 = radices.iter().map(|&r| r as u128).product();
        if total > MAX_ATOMS as u128 {
            return Err(Error::TooLarge {
                what: "joint outcome space".into(),
                size: total,
                limit: MAX_ATOMS as u128,
            });
        }
        let mut weights = vec![1.0];
        for j in 0..tree.depth() {
            let l = tree.n_levels_at(j);
            let mut next = Vec::with_capacity(weights.len() * l);
            for (c, &w) in weights.iter().enumerate() {
                let p = tree.context_probs(j, c);
                next.extend(p.iter().map(|&q| w * q));
            }
            weights = next;
        }
        let tree_space = ContextSpace::new(tree.order().as_slice(), &radices)?;
        let all: Vec<usize> = (0..radices.len()).collect();
        let schema_space = ContextSpace::new(&all, &radices)?;
        let map = tree_space.reindex_into(&schema_space);
        let mut probs = vec![0.0; weights.len()];
        for (c, &w) in weights.iter().enumerate() {
            probs[map[c]] = w;
        }
        let strides = (0..radices.len()).map(|k| radices[k + 1..].iter().product()).collect();
        Ok(JointTable { radices, strides, probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    #[inline]
    pub fn level(&self, atom: usize, var: usize) -> usize {
        (atom / self.strides[var]) % self.radices[var]
    }

    pub fn atom_index(&self, x: &[usize]) -> usize {
        x.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn decode(&self, atom: usize) -> Vec<usize> {
        (0..self.radices.len()).map(|v| self.level(atom, v)).collect()
    }

    /// Unnormalized marginal of `var`.
    pub fn marginal_mass(&self, var: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.radices[var]];
        for (atom, &p) in self.probs.iter().enumerate() {
            m[self.level(atom, var)] += p;
        }
        m
    }

    pub fn marginal(&self, var: usize) -> Vec<f64> {
        normalize(self.marginal_mass(var))
    }

    /// Normalized joint of `(a, b)`, row-major with `a` as row.
    pub fn pair_marginal(&self, a: usize, b: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.radices[b]]; self.radices[a]];
        let mut total = 0.0;
        for (atom, &p) in self.probs.iter().enumerate() {
            m[self.level(atom, a)][self.level(atom, b)] += p;
            total += p;
        }
        for row in m.iter_mut() {
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        m
    }

    /// Zeroes atoms inconsistent with the findings and renormalizes; returns the
    /// prior probability of the findings.
    pub fn condition(&mut self, findings: &BTreeMap<usize, usize>) -> f64 {
        let mut mass = 0.0;
        for atom in 0..self.probs.len() {
            if findings.iter().all(|(&v, &l)| self.level(atom, v) == l) {
                mass += self.probs[atom];
            } else {
                self.probs[atom] = 0.0;
            }
        }
        if mass > 0.0 {
            for p in self.probs.iter_mut() {
                *p /= mass;
            }
        }
        mass
    }

    fn scale_by(&mut self, var: usize, factors: &[f64]) {
        for atom in 0..self.probs.len() {
            let f = factors[self.level(atom, var)];
            self.probs[atom] *= f;
        }
    }

    fn max_deviation(&self, soft: &BTreeMap<usize, Vec<f64>>) -> f64 {
        let total = self.total();
        soft.iter()
            .flat_map(|(&v, q)| {
                let m = self.marginal_mass(v);
                m.into_iter().zip(q).map(move |(a, &b)| (a / total - b).abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    fn all_marginals(&self) -> Vec<Vec<f64>> {
        (0..self.radices.len()).map(|v| self.marginal(v)).collect()
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let t: f64 = v.iter().sum();
    if t > 0.0 {
        for x in v.iter_mut() {
            *x /= t;
        }
    }
    v
}

/// Hard findings (variable → level) and soft findings (variable → target marginal).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvidenceSpec {
    pub hard: BTreeMap<usize, usize>,
    pub soft: BTreeMap<usize, Vec<f64>>,
}

impl EvidenceSpec {
    pub fn new(schema: &Schema, hard: BTreeMap<usize, usize>, soft: BTreeMap<usize, Vec<f64>>) -> Result<Self> {
        for (&v, &l) in &hard {
            if v >= schema.len() || l >= schema.n_levels(v) {
                return Err(Error::invalid(format!("hard finding ({v}, {l}) out of range")));
            }
            if soft.contains_key(&v) {
                return Err(Error::invalid(format!(
                    "`{}` has both hard and soft evidence",
                    schema.variable(v).name
                )));
            }
        }
        for (&v, q) in &soft {
            if v >= schema.len() {
                return Err(Error::invalid(format!("soft finding on variable {v} out of range")));
            }
            let name = &schema.variable(v).name;
            if q.len() != schema.n_levels(v) {
                return Err(Error::invalid(format!(
                    "soft target for `{name}` has {} entries, expected {}",
                    q.len(),
                    schema.n_levels(v)
                )));
            }
            let total: f64 = q.iter().sum();
            if q.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("soft target for `{name}` is not a distribution")));
            }
        }
        Ok(EvidenceSpec { hard, soft })
    }

    /// Builds evidence from names and labels.
    pub fn from_names(schema: &Schema, hard: &[(&str, &str)], soft: &[(&str, Vec<f64>)]) -> Result<Self> {
        let mut h = BTreeMap::new();
        for &(var, level) in hard {
            let v = schema.index_of(var)?;
            h.insert(v, schema.variable(v).level_index(level)?);
        }
        let mut s = BTreeMap::new();
        for (var, q) in soft {
            s.insert(schema.index_of(var)?, q.clone());
        }
        EvidenceSpec::new(schema, h, s)
    }

    pub fn hard_only(schema: &Schema, hard: BTreeMap<usize, usize>) -> Result<Self> {
        EvidenceSpec::new(schema, hard, BTreeMap::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    /// Posterior marginal of every variable, schema order.
    pub marginals: Vec<Vec<f64>>,
    /// Prior probability of the hard findings.
    pub evidence_probability: Option<f64>,
    pub iterations: Option<usize>,
    pub max_deviation: Option<f64>,
}

/// Prior marginal of `var` by a forward pass down to its depth.
pub fn marginal(tree: &StagedTree, var: usize) -> Result<Vec<f64>> {
    if var >= tree.schema().len() {
        return Err(Error::invalid(format!("variable {var} out of range")));
    }
    let depth = tree.order().positions()[var];
    let mut weights = vec![1.0];
    for j in 0..depth {
        let l = tree.n_levels_at(j);
        let mut next = Vec::with_capacity(weights.len() * l);
        for (c, &w) in weights.iter().enumerate() {
            next.extend(tree.context_probs(j, c).iter().map(|&q| w * q));
        }
        weights = next;
    }
    let mut m = vec![0.0; tree.n_levels_at(depth)];
    for (c, &w) in weights.iter().enumerate() {
        for (acc, &q) in m.iter_mut().zip(tree.context_probs(depth, c)) {
            *acc += w * q;
        }
    }
    Ok(m)
}

pub fn joint_table(tree: &StagedTree) -> Result<JointTable> {
    JointTable::from_tree(tree)
}

fn describe_findings(schema: &Schema, findings: &BTreeMap<usize, usize>) -> String {
    findings
        .iter()
        .map(|(&v, &l)| format!("{}={}", schema.variable(v).name, schema.variable(v).levels[l]))
        .collect::<Vec<_>>()
        .join(", ")
}

fn hard_conditioned(tree: &StagedTree, hard: &BTreeMap<usize, usize>) -> Result<(JointTable, f64)> {
    let schema = tree.schema();
    for (&v, &l) in hard {
        if v >= schema.len() || l >= schema.n_levels(v) {
            return Err(Error::invalid(format!("hard finding ({v}, {l}) out of range")));
        }
    }
    let mut joint = JointTable::from_tree(tree)?;
    let prior = joint.clone();
    let mass = joint.condition(hard);
    if mass <= 0.0 {
        let impossible: BTreeMap<usize, usize> = hard
            .iter()
            .filter(|(&v, &l)| prior.marginal_mass(v)[l] <= 0.0)
            .map(|(&v, &l)| (v, l))
            .collect();
        let culprit = if impossible.is_empty() { hard } else { &impossible };
        return Err(Error::ImpossibleEvidence(describe_findings(schema, culprit)));
    }
    Ok((joint, mass))
}

/// Exact posterior marginals given hard findings.
pub fn condition_hard(tree: &StagedTree, hard: &BTreeMap<usize, usize>) -> Result<QueryResult> {
    let (joint, mass) = hard_conditioned(tree, hard)?;
    Ok(QueryResult {
        marginals: joint.all_marginals(),
        evidence_probability: Some(mass),
        iterations: None,
        max_deviation: None,
    })
}

/// Posterior joint after hard findings and soft (Jeffrey) findings.
///
/// Soft findings are imposed by cyclically rescaling the joint so that each soft
/// variable's marginal matches its target, until the largest deviation is below
/// `tol`. Conditionals given each soft variable are preserved by every rescaling step.
pub fn soft_conditioned_joint(
    tree: &StagedTree,
    evidence: &EvidenceSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(JointTable, QueryResult)> {
    let (mut joint, mass) = if evidence.hard.is_empty() {
        (JointTable::from_tree(tree)?, 1.0)
    } else {
        hard_conditioned(tree, &evidence.hard)?
    };
    let schema = tree.schema();
    let mut iterations = 0;
    let mut deviation = joint.max_deviation(&evidence.soft);
    while deviation >= tol {
        if iterations == max_iter {
            return Err(Error::NonConvergence { iterations, deviation });
        }
        for (&v, q) in &evidence.soft {
            let m = joint.marginal_mass(v);
            let total: f64 = m.iter().sum();
            let mut factors = vec![0.0; q.len()];
            for (l, (&mass_l, &target)) in m.iter().zip(q).enumerate() {
                if target > 0.0 {
                    if mass_l <= 0.0 {
                        return Err(Error::ImpossibleEvidence(format!(
                            "soft target puts mass on {}={} which has zero probability",
                            schema.variable(v).name,
                            schema.variable(v).levels[l]
                        )));
                    }
                    factors[l] = target * total / mass_l;
                }
            }
            joint.scale_by(v, &factors);
        }
        iterations += 1;
        deviation = joint.max_deviation(&evidence.soft);
    }
    let total = joint.total();
    for p in joint.probs.iter_mut() {
        *p /= total;
    }
    let result = QueryResult {
        marginals: joint.all_marginals(),
        evidence_probability: if evidence.hard.is_empty() { None } else { Some(mass) },
        iterations: Some(iterations),
        max_deviation: Some(deviation),
    };
    Ok((joint, result))
}

pub fn condition_soft(tree: &StagedTree, evidence: &EvidenceSpec, tol: f64, max_iter: usize) -> Result<QueryResult> {
    Ok(soft_conditioned_joint(tree, evidence, tol, max_iter)?.1)
}

/// Virtual (likelihood) evidence: `P'(x) ∝ P(x)·Π_v λ_v(x_v)`.
pub fn condition_virtual(
    tree: &StagedTree,
    hard: &BTreeMap<usize, usize>,
    likelihoods: &BTreeMap<usize, Vec<f64>>,
) -> Result<QueryResult> {
    let (mut joint, mass) = if hard.is_empty() {
        (JointTable::from_tree(tree)?, 1.0)
    } else {
        hard_conditioned(tree, hard)?
    };
    let schema = tree.schema();
    for (&v, w) in likelihoods {
        if v >= schema.len() || w.len() != schema.n_levels(v) || w.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::invalid(format!("invalid likelihood vector for variable {v}")));
        }
        joint.scale_by(v, w);
    }
    let total = joint.total();
    if total <= 0.0 {
        return Err(Error::ImpossibleEvidence("likelihood evidence removes all probability mass".into()));
    }
    for p in joint.probs.iter_mut() {
        *p /= total;
    }
    Ok(QueryResult {
        marginals: joint.all_marginals(),
        evidence_probability: if hard.is_empty() { None } else { Some(mass) },
        iterations: None,
        max_deviation: None,
    })
}

fn plogp_sum(pair: &[Vec<f64>]) -> f64 {
    let row: Vec<f64> = pair.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..pair[0].len()).map(|b| pair.iter().map(|r| r[b]).sum()).collect();
    let mut mi = 0.0;
    for (a, r) in pair.iter().enumerate() {
        for (b, &p) in r.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (row[a] * col[b])).ln();
            }
        }
    }
    mi
}

/// Mutual information (nats) between two variables under the model's joint.
pub fn mutual_information(tree: &StagedTree, a: usize, b: usize) -> Result<f64> {
    let p = tree.schema().len();
    if a >= p || b >= p {
        return Err(Error::invalid("variable index out of range"));
    }
    let joint = JointTable::from_tree(tree)?;
    if a == b {
        return Ok(entropy(&joint.marginal(a)));
    }
    Ok(plogp_sum(&joint.pair_marginal(a, b)).max(0.0))
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
    Mixed,
    NoChange,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Increase => "increase",
            Direction::Decrease => "decrease",
            Direction::Mixed => "mixed",
            Direction::NoChange => "none",
        })
    }
}

const CHANGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfRow {
    pub predictor: usize,
    pub target_level: usize,
    /// Largest `|P(target=t | X=b) - P(target=t | X=a)|` over level pairs `a < b`.
    pub max_abs_change: f64,
    pub from_level: usize,
    pub to_level: usize,
    /// `P(t | to_level) - P(t | from_level)`.
    pub signed_change: f64,
    /// Trend of `P(target=t | X=x)` along the predictor's level order.
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfTable {
    pub target: usize,
    pub rows: Vec<WhatIfRow>,
    /// Mutual information between each predictor and the target, same order as requested.
    pub mutual_information: Vec<(usize, f64)>,
    /// Predictor levels with zero probability that could not be conditioned on.
    pub skipped: Vec<(usize, usize)>,
}

/// Sensitivity of `target` to each predictor: conditions on every predictor level and
/// reports the largest change of each target level's probability.
pub fn whatif_sweep(tree: &StagedTree, target: usize, predictors: &[usize]) -> Result<WhatIfTable> {
    let p = tree.schema().len();
    if target >= p || predictors.iter().any(|&x| x >= p) {
        return Err(Error::invalid("variable index out of range"));
    }
    if predictors.contains(&target) {
        return Err(Error::invalid("target cannot be one of the predictors"));
    }
    let joint = JointTable::from_tree(tree)?;
    let lt = tree.schema().n_levels(target);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut mi = Vec::new();
    for &x in predictors {
        let pair = joint.pair_marginal(x, target);
        mi.push((x, plogp_sum(&pair).max(0.0)));
        let mut conditionals: Vec<(usize, Vec<f64>)> = Vec::new();
        for (level, row) in pair.iter().enumerate() {
            let mass: f64 = row.iter().sum();
            if mass <= 0.0 {
                skipped.push((x, level));
                continue;
            }
            conditionals.push((level, row.iter().map(|v| v / mass).collect()));
        }
        for t in 0..lt {
            let mut best = (0.0, 0, 0, 0.0);
            for i in 0..conditionals.len() {
                for j in i + 1..conditionals.len() {
                    let change = conditionals[j].1[t] - conditionals[i].1[t];
                    if change.abs() > best.0 {
                        best = (change.abs(), conditionals[i].0, conditionals[j].0, change);
                    }
                }
            }
            if conditionals.len() >= 2 && best.0 == 0.0 {
                best.1 = conditionals[0].0;
                best.2 = conditionals[1].0;
            }
            let steps: Vec<f64> = conditionals.windows(2).map(|w| w[1].1[t] - w[0].1[t]).collect();
            let up = steps.iter().any(|&s| s > CHANGE_EPS);
            let down = steps.iter().any(|&s| s < -CHANGE_EPS);
            let direction = match (up, down) {
                (true, false) => Direction::Increase,
                (false, true) => Direction::Decrease,
                (true, true) => Direction::Mixed,
                (false, false) => Direction::NoChange,
            };
            rows.push(WhatIfRow {
                predictor: x,
                target_level: t,
                max_abs_change: best.0,
                from_level: best.1,
                to_level: best.2,
                signed_change: best.3,
                direction,
            });
        }
    }
    Ok(WhatIfTable {
        target,
        rows,
        mutual_information: mi,
        skipped,
    })
}
