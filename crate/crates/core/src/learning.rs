//! Structure learning for staged trees.
//!
//! Every per-variable search runs on the contexts of the variable's predecessor *set*
//! enumerated in ascending variable index, and the result is re-indexed into the
//! tree's own context order afterwards. The local result for a variable therefore
//! depends only on which variables precede it, never on how they are ordered, which
//! is what makes subset dynamic programming over orders exact.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{depth_bic, stage_probabilities, weighted_log_lik, ContextCounts, ContextSpace};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::staged_tree::{FitConfig, StageAssignment, StagedTree, VariableOrder};

/// A merge is accepted only when it lowers the score by more than this.
pub const MERGE_TOLERANCE: f64 = 1e-9;

/// Largest number of variables searched by subset dynamic programming.
pub const MAX_DP_VARIABLES: usize = 12;

/// Largest number of contexts the exhaustive staging oracle accepts.
pub const MAX_EXHAUSTIVE_CONTEXTS: usize = 8;

const MAX_GROUPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Algorithm {
    /// Backward hill climbing from the saturated staging.
    Bhc,
    /// Greedy CMI parent selection (at most `k` parents), then BHC merging.
    KParents { k: usize },
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Bhc => write!(f, "bhc"),
            Algorithm::KParents { k } => write!(f, "kparents:{k}"),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "bhc" {
            return Ok(Algorithm::Bhc);
        }
        if let Some(k) = s.strip_prefix("kparents:").or_else(|| s.strip_prefix("kparents")) {
            let k: usize = k
                .parse()
                .map_err(|_| Error::invalid(format!("cannot parse k in `{s}`")))?;
            if k == 0 {
                return Err(Error::invalid("k must be at least 1"));
            }
            return Ok(Algorithm::KParents { k });
        }
        Err(Error::invalid(format!("unknown algorithm `{s}` (expected bhc or kparents:K)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub algorithm: Algorithm,
    /// Pseudo-count used while scoring candidate stagings and in the final fit.
    pub smoothing: f64,
}

impl LearnConfig {
    pub fn bhc() -> Self {
        LearnConfig {
            algorithm: Algorithm::Bhc,
            smoothing: 0.0,
        }
    }

    pub fn kparents(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(LearnConfig {
            algorithm: Algorithm::KParents { k },
            smoothing: 0.0,
        })
    }
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig::bhc()
    }
}

// ---------------------------------------------------------------------------
// Stage scoring and the BHC merge engine

fn stage_cost(counts: &[u64], smoothing: f64, ln_n: f64) -> f64 {
    let probs = stage_probabilities(counts, smoothing);
    -2.0 * weighted_log_lik(counts, &probs) + (counts.len() - 1) as f64 * ln_n
}

/// BIC contribution of one depth under a staging of `counts`' contexts.
pub fn staging_score(counts: &ContextCounts, staging: &StageAssignment, smoothing: f64, n_rows: usize) -> f64 {
    let ln_n = (n_rows as f64).ln();
    let terms = counts
        .pool(staging.as_slice(), staging.n_stages())
        .iter()
        .map(|c| weighted_log_lik(c, &stage_probabilities(c, smoothing)))
        .collect();
    depth_bic(terms, staging.n_stages() * (counts.n_levels() - 1), ln_n)
}

/// Result of a backward hill-climbing run on one depth.
#[derive(Debug, Clone, PartialEq)]
pub struct BhcOutcome {
    pub staging: StageAssignment,
    /// Depth score before any merge, then after each accepted merge.
    pub trajectory: Vec<f64>,
}

struct MergeEngine<'a> {
    pooled: Vec<Vec<u64>>,
    cost: Vec<f64>,
    active: Vec<bool>,
    /// For each active stage `a`: best `(delta, b)` over active `b > a`.
    best: Vec<Option<(f64, usize)>>,
    smoothing: f64,
    ln_n: f64,
    scratch: &'a mut Vec<u64>,
}

impl MergeEngine<'_> {
    fn delta(&mut self, a: usize, b: usize) -> f64 {
        self.scratch.clear();
        self.scratch
            .extend(self.pooled[a].iter().zip(&self.pooled[b]).map(|(x, y)| x + y));
        stage_cost(self.scratch, self.smoothing, self.ln_n) - self.cost[a] - self.cost[b]
    }

    fn recompute_row(&mut self, a: usize) {
        let mut best: Option<(f64, usize)> = None;
        for b in a + 1..self.active.len() {
            if !self.active[b] {
                continue;
            }
            let d = self.delta(a, b);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, b));
            }
        }
        self.best[a] = best;
    }

    fn argmin(&self) -> Option<(f64, usize, usize)> {
        let mut out: Option<(f64, usize, usize)> = None;
        for (a, entry) in self.best.iter().enumerate() {
            if !self.active[a] {
                continue;
            }
            if let Some((d, b)) = *entry {
                if out.is_none_or(|(od, _, _)| d < od) {
                    out = Some((d, a, b));
                }
            }
        }
        out
    }

    /// Merges `b` into `a` (`a < b`) and repairs the row minima.
    fn merge(&mut self, a: usize, b: usize) {
        let moved = std::mem::take(&mut self.pooled[b]);
        for (x, y) in self.pooled[a].iter_mut().zip(&moved) {
            *x += y;
        }
        self.cost[a] = stage_cost(&self.pooled[a], self.smoothing, self.ln_n);
        self.active[b] = false;
        self.best[b] = None;
        self.recompute_row(a);
        for r in 0..b {
            if r == a || !self.active[r] {
                continue;
            }
            let partner = self.best[r].map(|(_, p)| p);
            if partner == Some(a) || partner == Some(b) {
                self.recompute_row(r);
            } else if r < a {
                let d = self.delta(r, a);
                match self.best[r] {
                    Some((bd, bp)) if d > bd || (d == bd && a > bp) => {}
                    _ => self.best[r] = Some((d, a)),
                }
            }
        }
    }
}

/// Greedy agglomeration of the stages of `initial`, always applying the merge with the
/// lowest score delta (ties go to the lexicographically smallest stage pair), until no
/// merge lowers the score by more than [`MERGE_TOLERANCE`].
pub fn bhc_merge(counts: &ContextCounts, initial: &StageAssignment, smoothing: f64, n_rows: usize) -> BhcOutcome {
    let ln_n = (n_rows as f64).ln();
    let pooled = counts.pool(initial.as_slice(), initial.n_stages());
    let cost: Vec<f64> = pooled.iter().map(|c| stage_cost(c, smoothing, ln_n)).collect();
    let s = pooled.len();
    let mut scratch = Vec::with_capacity(counts.n_levels());
    let mut engine = MergeEngine {
        pooled,
        cost,
        active: vec![true; s],
        best: vec![None; s],
        smoothing,
        ln_n,
        scratch: &mut scratch,
    };
    for a in 0..s {
        engine.recompute_row(a);
    }
    let mut rep: Vec<usize> = (0..s).collect();
    let mut score = staging_score(counts, initial, smoothing, n_rows);
    let mut trajectory = vec![score];
    while let Some((d, a, b)) = engine.argmin() {
        if d >= -MERGE_TOLERANCE {
            break;
        }
        engine.merge(a, b);
        for r in rep.iter_mut() {
            if *r == b {
                *r = a;
            }
        }
        score += d;
        trajectory.push(score);
    }
    let labels: Vec<usize> = initial.as_slice().iter().map(|&st| rep[st]).collect();
    let staging = StageAssignment::from_labels(&labels);
    if let Some(last) = trajectory.last_mut() {
        *last = staging_score(counts, &staging, smoothing, n_rows);
    }
    BhcOutcome { staging, trajectory }
}

// ---------------------------------------------------------------------------
// Per-variable searches

/// Learned staging for one variable given its predecessor set.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub variable: usize,
    /// Predecessors, ascending; the staging is indexed over their contexts in this order.
    pub predecessors: Vec<usize>,
    /// Parent set the search was restricted to (all predecessors for BHC).
    pub parents: Vec<usize>,
    pub staging: StageAssignment,
    pub trajectory: Vec<f64>,
    pub score: f64,
}

fn sorted(vars: &[usize]) -> Vec<usize> {
    let mut v = vars.to_vec();
    v.sort_unstable();
    v
}

/// Runs the configured search for `variable` with the given predecessor set.
pub fn learn_local(d: &Dataset, variable: usize, predecessors: &[usize], cfg: &LearnConfig) -> Result<LocalFit> {
    let preds = sorted(predecessors);
    let space = ContextSpace::new(&preds, &d.schema().level_counts())?;
    let counts = ContextCounts::tabulate(d, &space, variable);
    let (parents, initial) = match cfg.algorithm {
        Algorithm::Bhc => (preds.clone(), StageAssignment::singletons(space.len())),
        Algorithm::KParents { k } => {
            let parents = select_parents(d, variable, &preds, k);
            let keep: Vec<usize> = parents
                .iter()
                .map(|p| preds.iter().position(|q| q == p).expect("parent is a predecessor"))
                .collect();
            let labels: Vec<Vec<usize>> = (0..space.len())
                .map(|c| {
                    let digits = space.decode(c);
                    keep.iter().map(|&k| digits[k]).collect()
                })
                .collect();
            let refs: Vec<&Vec<usize>> = labels.iter().collect();
            (parents, StageAssignment::from_labels(&refs))
        }
    };
    let outcome = bhc_merge(&counts, &initial, cfg.smoothing, d.n_rows());
    let score = *outcome.trajectory.last().expect("trajectory is never empty");
    Ok(LocalFit {
        variable,
        predecessors: preds,
        parents,
        staging: outcome.staging,
        trajectory: outcome.trajectory,
        score,
    })
}

/// Re-indexes a staging computed over ascending-index predecessor contexts into the
/// context order of depth `depth` of `order`.
fn to_tree_order(d: &Dataset, order: &VariableOrder, depth: usize, local: &LocalFit) -> Result<StageAssignment> {
    let counts = d.schema().level_counts();
    let tree_space = ContextSpace::new(&order.as_slice()[..depth], &counts)?;
    let canon = ContextSpace::new(&local.predecessors, &counts)?;
    let map = tree_space.reindex_into(&canon);
    let labels: Vec<usize> = map.iter().map(|&c| local.staging.stage_of(c)).collect();
    Ok(StageAssignment::from_labels(&labels))
}

fn local_at(d: &Dataset, order: &VariableOrder, depth: usize, cfg: &LearnConfig) -> Result<LocalFit> {
    learn_local(d, order.as_slice()[depth], &order.as_slice()[..depth], cfg)
}

/// BHC staging of one depth, in the tree's context order.
pub fn bhc_stage_depth(d: &Dataset, order: &VariableOrder, depth: usize, smoothing: f64) -> Result<StageAssignment> {
    Ok(bhc_stage_depth_traced(d, order, depth, smoothing)?.staging)
}

pub fn bhc_stage_depth_traced(d: &Dataset, order: &VariableOrder, depth: usize, smoothing: f64) -> Result<BhcOutcome> {
    let cfg = LearnConfig {
        algorithm: Algorithm::Bhc,
        smoothing,
    };
    let local = local_at(d, order, depth, &cfg)?;
    Ok(BhcOutcome {
        staging: to_tree_order(d, order, depth, &local)?,
        trajectory: local.trajectory,
    })
}

/// A learned tree together with the parent sets the search was restricted to.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedTree {
    pub tree: StagedTree,
    /// `parent_sets[v]` for each variable `v` (schema index), ascending.
    pub parent_sets: Vec<Vec<usize>>,
}

/// Learns the staging of every depth independently (in parallel), then fits the tree.
pub fn learn_tree(d: &Dataset, order: &VariableOrder, cfg: &LearnConfig) -> Result<LearnedTree> {
    if order.len() != d.n_vars() {
        return Err(Error::invalid("order length does not match the dataset"));
    }
    let locals = (0..order.len())
        .into_par_iter()
        .map(|j| {
            let local = local_at(d, order, j, cfg)?;
            let staging = to_tree_order(d, order, j, &local)?;
            Ok((local.parents, staging))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parent_sets = vec![Vec::new(); order.len()];
    let mut stagings = Vec::with_capacity(order.len());
    for (j, (parents, staging)) in locals.into_iter().enumerate() {
        parent_sets[order.as_slice()[j]] = parents;
        stagings.push(staging);
    }
    let tree = StagedTree::unfitted(d.schema().clone(), order.clone(), stagings)?
        .fit(d, FitConfig::new(cfg.smoothing)?)?;
    Ok(LearnedTree { tree, parent_sets })
}

pub fn bhc(d: &Dataset, order: &VariableOrder, smoothing: f64) -> Result<StagedTree> {
    let cfg = LearnConfig {
        algorithm: Algorithm::Bhc,
        smoothing,
    };
    Ok(learn_tree(d, order, &cfg)?.tree)
}

pub fn kparents_learn(d: &Dataset, order: &VariableOrder, k: usize, smoothing: f64) -> Result<LearnedTree> {
    let mut cfg = LearnConfig::kparents(k)?;
    cfg.smoothing = smoothing;
    learn_tree(d, order, &cfg)
}

// ---------------------------------------------------------------------------
// Exhaustive oracle

/// Globally BIC-optimal staging of one depth by enumerating all set partitions.
///
/// Partitions are visited as restricted growth strings; among equal scores the first
/// visited wins.
pub fn exhaustive_stage(d: &Dataset, order: &VariableOrder, depth: usize, smoothing: f64) -> Result<StageAssignment> {
    let space = ContextSpace::new(&order.as_slice()[..depth], &d.schema().level_counts())?;
    let n = space.len();
    if n > MAX_EXHAUSTIVE_CONTEXTS {
        return Err(Error::TooLarge {
            what: "exhaustive staging search".into(),
            size: n as u128,
            limit: MAX_EXHAUSTIVE_CONTEXTS as u128,
        });
    }
    let counts = ContextCounts::tabulate(d, &space, order.as_slice()[depth]);
    let mut rgs = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let st = StageAssignment::from_labels(&rgs);
        let s = staging_score(&counts, &st, smoothing, d.n_rows());
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            best = Some((s, rgs.clone()));
        }
        if !next_rgs(&mut rgs) {
            break;
        }
    }
    Ok(StageAssignment::from_labels(&best.expect("at least one partition").1))
}

fn next_rgs(a: &mut [usize]) -> bool {
    let n = a.len();
    for i in (1..n).rev() {
        let max_prefix = a[..i].iter().copied().max().unwrap_or(0);
        if a[i] <= max_prefix {
            a[i] += 1;
            for x in a[i + 1..].iter_mut() {
                *x = 0;
            }
            return true;
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Conditional mutual information and k-parent selection

/// Plug-in conditional mutual information `I(X_i; X_s | X_C)` in nats, clamped at 0.
pub fn cmi(d: &Dataset, i: usize, s: usize, cond: &[usize]) -> Result<f64> {
    if i == s || cond.contains(&i) || cond.contains(&s) {
        return Err(Error::invalid("cmi requires distinct i, s outside the conditioning set"));
    }
    let space = ContextSpace::new(cond, &d.schema().level_counts())?;
    Ok(cmi_counts(d, i, s, &space))
}

fn cmi_counts(d: &Dataset, i: usize, s: usize, space: &ContextSpace) -> f64 {
    let li = d.schema().n_levels(i);
    let ls = d.schema().n_levels(s);
    let nc = space.len();
    let mut joint = vec![0u64; nc * li * ls];
    for row in d.rows() {
        let c = space.index_of_row(row);
        joint[(c * li + row[i] as usize) * ls + row[s] as usize] += 1;
    }
    let n = d.n_rows() as f64;
    let mut total = 0.0;
    let mut n_ci = vec![0u64; li];
    let mut n_cs = vec![0u64; ls];
    for c in 0..nc {
        let block = &joint[c * li * ls..(c + 1) * li * ls];
        n_ci.iter_mut().for_each(|x| *x = 0);
        n_cs.iter_mut().for_each(|x| *x = 0);
        for x in 0..li {
            for y in 0..ls {
                let k = block[x * ls + y];
                n_ci[x] += k;
                n_cs[y] += k;
            }
        }
        let n_c: u64 = n_ci.iter().sum();
        if n_c == 0 {
            continue;
        }
        for x in 0..li {
            for y in 0..ls {
                let k = block[x * ls + y];
                if k == 0 {
                    continue;
                }
                let ratio = (k as f64 * n_c as f64) / (n_ci[x] as f64 * n_cs[y] as f64);
                total += k as f64 / n * ratio.ln();
            }
        }
    }
    total.max(0.0)
}

/// Greedy forward selection of at most `k` parents for `variable` among `predecessors`
/// by conditional mutual information given the parents chosen so far. All
/// predecessors are kept when there are at most `k` of them. Ties go to the smallest
/// variable index.
pub fn select_parents(d: &Dataset, variable: usize, predecessors: &[usize], k: usize) -> Vec<usize> {
    let preds = sorted(predecessors);
    if preds.len() <= k {
        return preds;
    }
    let counts = d.schema().level_counts();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let cond_space = ContextSpace::new(&chosen, &counts).expect("at most k small variables");
        let mut best: Option<(f64, usize)> = None;
        for &s in preds.iter().filter(|s| !chosen.contains(s)) {
            let val = cmi_counts(d, variable, s, &cond_space);
            if best.is_none_or(|(b, _)| val > b) {
                best = Some((val, s));
            }
        }
        chosen.push(best.expect("candidates remain").1);
    }
    chosen.sort_unstable();
    chosen
}

// ---------------------------------------------------------------------------
// Order search

/// Memo of per-variable searches keyed by `(variable, ascending predecessor set)`.
#[derive(Default)]
pub struct ScoreCache {
    map: Mutex<HashMap<(usize, Vec<usize>), Arc<LocalFit>>>,
}

impl ScoreCache {
    pub fn new() -> Self {
        ScoreCache::default()
    }

    pub fn get(&self, d: &Dataset, variable: usize, predecessors: &[usize], cfg: &LearnConfig) -> Result<Arc<LocalFit>> {
        let key = (variable, sorted(predecessors));
        if let Some(hit) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let fit = Arc::new(learn_local(d, variable, &key.1, cfg)?);
        self.map
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| Arc::clone(&fit));
        Ok(fit)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Score of a full order: per-variable scores accumulated in depth order.
    pub fn order_score(&self, d: &Dataset, order: &[usize], cfg: &LearnConfig) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..order.len() {
            total += self.get(d, order[j], &order[..j], cfg)?.score;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OrderSearchMode {
    /// Factorial enumeration of all orders, each scored by learning its tree.
    Exhaustive,
    Dp,
    /// Ordered groups of variable indices; see [`order_search_grouped`].
    Grouped(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSearchConfig {
    pub mode: OrderSearchMode,
    /// Variable pinned to the last position; the search runs over the others.
    pub fixed_last: Option<usize>,
    pub max_p: usize,
}

impl Default for OrderSearchConfig {
    fn default() -> Self {
        OrderSearchConfig {
            mode: OrderSearchMode::Dp,
            fixed_last: None,
            max_p: MAX_DP_VARIABLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSearchResult {
    pub order: VariableOrder,
    pub score: f64,
}

pub fn order_search(d: &Dataset, cfg: &LearnConfig, search: &OrderSearchConfig) -> Result<OrderSearchResult> {
    let cache = ScoreCache::new();
    match &search.mode {
        OrderSearchMode::Exhaustive => order_search_exhaustive(d, cfg, search.fixed_last),
        OrderSearchMode::Dp => order_search_dp_cached(d, cfg, search.fixed_last, search.max_p, &cache),
        OrderSearchMode::Grouped(groups) => order_search_grouped_cached(d, groups, cfg, search.fixed_last, &cache),
    }
}

fn check_fixed_last(d: &Dataset, fixed_last: Option<usize>) -> Result<()> {
    match fixed_last {
        Some(v) if v >= d.n_vars() => Err(Error::invalid(format!("fixed last variable {v} out of range"))),
        _ => Ok(()),
    }
}

/// Subset dynamic programming over orders. The best order of a set `S` ends in some
/// `v`, preceded by the best order of `S \ {v}`; the per-variable score only depends on
/// the predecessor set. Among equal scores the lexicographically smallest order wins.
pub fn order_search_dp(d: &Dataset, cfg: &LearnConfig, fixed_last: Option<usize>) -> Result<OrderSearchResult> {
    order_search_dp_cached(d, cfg, fixed_last, MAX_DP_VARIABLES, &ScoreCache::new())
}

pub fn order_search_dp_cached(
    d: &Dataset,
    cfg: &LearnConfig,
    fixed_last: Option<usize>,
    max_p: usize,
    cache: &ScoreCache,
) -> Result<OrderSearchResult> {
    check_fixed_last(d, fixed_last)?;
    let vars: Vec<usize> = (0..d.n_vars()).filter(|&v| Some(v) != fixed_last).collect();
    let limit = max_p.min(MAX_DP_VARIABLES);
    if vars.len() > limit {
        return Err(Error::invalid(format!(
            "dynamic-programming order search handles at most {limit} variables, got {}; use grouped mode",
            vars.len()
        )));
    }
    let (mut order, mut score) = dp_over(d, &vars, cfg, cache)?;
    if let Some(last) = fixed_last {
        score += cache.get(d, last, &order, cfg)?.score;
        order.push(last);
    }
    Ok(OrderSearchResult {
        order: VariableOrder::new(order)?,
        score,
    })
}

/// Best order of `vars` when only these variables exist.
fn dp_over(d: &Dataset, vars: &[usize], cfg: &LearnConfig, cache: &ScoreCache) -> Result<(Vec<usize>, f64)> {
    let n = vars.len();
    let full = (1usize << n) - 1;
    let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; 1 << n];
    best[0] = Some((0.0, Vec::new()));
    for size in 1..=n {
        let masks: Vec<usize> = (1..=full).filter(|m| m.count_ones() as usize == size).collect();
        let level = masks
            .par_iter()
            .map(|&mask| {
                let mut out: Option<(f64, Vec<usize>)> = None;
                for (bit, &v) in vars.iter().enumerate() {
                    if mask & (1 << bit) == 0 {
                        continue;
                    }
                    let (prev_score, prev_order) = best[mask ^ (1 << bit)].as_ref().expect("filled by previous level");
                    let local = cache.get(d, v, prev_order, cfg)?;
                    let score = prev_score + local.score;
                    let better = match &out {
                        None => true,
                        Some((s, o)) => score < *s || (score == *s && lex_less_with(prev_order, v, o)),
                    };
                    if better {
                        let mut order = prev_order.clone();
                        order.push(v);
                        out = Some((score, order));
                    }
                }
                Ok((mask, out.expect("non-empty mask")))
            })
            .collect::<Result<Vec<_>>>()?;
        for (mask, entry) in level {
            best[mask] = Some(entry);
        }
    }
    let (score, order) = best[full].take().expect("full set solved");
    Ok((order, score))
}

fn lex_less_with(prefix: &[usize], last: usize, other: &[usize]) -> bool {
    prefix.iter().copied().chain(std::iter::once(last)).lt(other.iter().copied())
}

/// Factorial enumeration; each order is scored by learning and scoring its full tree.
pub fn order_search_exhaustive(d: &Dataset, cfg: &LearnConfig, fixed_last: Option<usize>) -> Result<OrderSearchResult> {
    check_fixed_last(d, fixed_last)?;
    let vars: Vec<usize> = (0..d.n_vars()).filter(|&v| Some(v) != fixed_last).collect();
    if vars.len() > 9 {
        return Err(Error::invalid("exhaustive order search is limited to 9 variables"));
    }
    let mut best: Option<OrderSearchResult> = None;
    for mut perm in permutations(&vars) {
        perm.extend(fixed_last);
        let order = VariableOrder::new(perm)?;
        let tree = learn_tree(d, &order, cfg)?.tree;
        let score = tree.bic(d)?;
        if best.as_ref().is_none_or(|b| score < b.score) {
            best = Some(OrderSearchResult { order, score });
        }
    }
    Ok(best.expect("at least one order"))
}

/// All permutations of `items` in lexicographic order of positions.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    let mut out = vec![idx.iter().map(|&i| items[i]).collect()];
    loop {
        let Some(i) = (1..idx.len()).rev().find(|&i| idx[i - 1] < idx[i]) else {
            return out;
        };
        let j = (i..idx.len()).rev().find(|&j| idx[j] > idx[i - 1]).expect("exists");
        idx.swap(i - 1, j);
        idx[i..].reverse();
        out.push(idx.iter().map(|&i| items[i]).collect());
    }
}

/// Two-stage search: the best order inside each group (other groups absent), then the
/// best arrangement of the groups as blocks.
pub fn order_search_grouped(d: &Dataset, groups: &[Vec<usize>], cfg: &LearnConfig) -> Result<OrderSearchResult> {
    order_search_grouped_cached(d, groups, cfg, None, &ScoreCache::new())
}

pub fn order_search_grouped_cached(
    d: &Dataset,
    groups: &[Vec<usize>],
    cfg: &LearnConfig,
    fixed_last: Option<usize>,
    cache: &ScoreCache,
) -> Result<OrderSearchResult> {
    check_fixed_last(d, fixed_last)?;
    let mut seen = vec![false; d.n_vars()];
    for g in groups {
        if g.is_empty() {
            return Err(Error::invalid("groups must be non-empty"));
        }
        for &v in g {
            if v >= d.n_vars() || seen[v] {
                return Err(Error::invalid("groups must partition the variables"));
            }
            seen[v] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid("groups must partition the variables"));
    }
    let groups: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| g.iter().copied().filter(|&v| Some(v) != fixed_last).collect::<Vec<_>>())
        .filter(|g: &Vec<usize>| !g.is_empty())
        .collect();
    if groups.len() > MAX_GROUPS {
        return Err(Error::invalid(format!("at most {MAX_GROUPS} groups are supported")));
    }
    let mut inner = Vec::with_capacity(groups.len());
    for g in &groups {
        if g.len() > MAX_DP_VARIABLES {
            return Err(Error::invalid(format!(
                "group of {} variables exceeds the limit of {MAX_DP_VARIABLES}",
                g.len()
            )));
        }
        inner.push(dp_over(d, g, cfg, cache)?.0);
    }
    let block_ids: Vec<usize> = (0..groups.len()).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(&block_ids) {
        let mut order: Vec<usize> = perm.iter().flat_map(|&b| inner[b].iter().copied()).collect();
        order.extend(fixed_last);
        let score = cache.order_score(d, &order, cfg)?;
        let better = match &best {
            None => true,
            Some((s, o)) => score < *s || (score == *s && order < *o),
        };
        if better {
            best = Some((score, order));
        }
    }
    let (score, order) = best.expect("at least one block order");
    Ok(OrderSearchResult {
        order: VariableOrder::new(order)?,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Schema, Variable};

    fn data(levels: &[usize], rows: &[Vec<usize>]) -> Dataset {
        let schema = Schema::new(
            levels
                .iter()
                .enumerate()
                .map(|(i, &l)| Variable::new(format!("X{i}"), (0..l).map(|v| v.to_string())))
                .collect(),
        )
        .unwrap();
        Dataset::from_rows(schema, rows).unwrap()
    }

    #[test]
    fn rgs_enumerates_bell_numbers() {
        for (n, bell) in [(1, 1), (2, 2), (3, 5), (4, 15), (5, 52)] {
            let mut a = vec![0; n];
            let mut count = 1;
            while next_rgs(&mut a) {
                count += 1;
            }
            assert_eq!(count, bell);
        }
    }

    #[test]
    fn permutations_lexicographic() {
        let p = permutations(&[3, 5, 7]);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![3, 5, 7]);
        assert_eq!(p[1], vec![3, 7, 5]);
        assert_eq!(p[5], vec![7, 5, 3]);
    }

    #[test]
    fn algorithm_parsing() {
        assert_eq!("bhc".parse::<Algorithm>().unwrap(), Algorithm::Bhc);
        assert_eq!("kparents:4".parse::<Algorithm>().unwrap(), Algorithm::KParents { k: 4 });
        assert!("kparents:0".parse::<Algorithm>().is_err());
        assert!("tabu".parse::<Algorithm>().is_err());
        assert_eq!(Algorithm::KParents { k: 2 }.to_string(), "kparents:2");
    }

    #[test]
    fn identical_contexts_merge() {
        // X0 uniform; X1 | X0 identical in both contexts.
        let mut rows = Vec::new();
        for x0 in 0..2 {
            for _ in 0..300 {
                rows.push(vec![x0, 0]);
            }
            for _ in 0..100 {
                rows.push(vec![x0, 1]);
            }
        }
        let d = data(&[2, 2], &rows);
        let st = bhc_stage_depth(&d, &VariableOrder::identity(2), 1, 0.0).unwrap();
        assert_eq!(st.n_stages(), 1);
        let ex = exhaustive_stage(&d, &VariableOrder::identity(2), 1, 0.0).unwrap();
        assert_eq!(ex.n_stages(), 1);
    }

    #[test]
    fn exhaustive_guard() {
        let rows: Vec<Vec<usize>> = (0..20).map(|i| vec![i % 3, (i / 3) % 3, i % 2]).collect();
        let d = data(&[3, 3, 2], &rows);
        assert!(exhaustive_stage(&d, &VariableOrder::identity(3), 2, 0.0).is_err());
    }

    #[test]
    fn cmi_argument_checks() {
        let rows: Vec<Vec<usize>> = (0..20).map(|i| vec![i % 2, (i / 2) % 2, (i / 4) % 2]).collect();
        let d = data(&[2, 2, 2], &rows);
        assert!(cmi(&d, 0, 0, &[]).is_err());
        assert!(cmi(&d, 0, 1, &[1]).is_err());
        assert!(cmi(&d, 0, 1, &[2]).unwrap() >= 0.0);
    }

    #[test]
    fn perfect_dependence_cmi_is_ln2() {
        let rows: Vec<Vec<usize>> = (0..1000).map(|i| vec![i % 2, i % 2]).collect();
        let d = data(&[2, 2], &rows);
        assert!((cmi(&d, 0, 1, &[]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn dp_guard_and_fixed_last_range() {
        let rows: Vec<Vec<usize>> = (0..4).map(|i| vec![i % 2; 13]).collect();
        let d = data(&[2; 13], &rows);
        assert!(order_search_dp(&d, &LearnConfig::bhc(), None).is_err());
        let small = data(&[2, 2], &[vec![0, 1], vec![1, 0]]);
        assert!(order_search_dp(&small, &LearnConfig::bhc(), Some(5)).is_err());
    }

    #[test]
    fn grouped_requires_partition() {
        let d = data(&[2, 2, 2], &[vec![0, 1, 0], vec![1, 0, 1]]);
        let cfg = LearnConfig::bhc();
        assert!(order_search_grouped(&d, &[vec![0, 1]], &cfg).is_err());
        assert!(order_search_grouped(&d, &[vec![0, 1], vec![1, 2]], &cfg).is_err());
        assert!(order_search_grouped(&d, &[vec![0, 1], vec![2]], &cfg).is_ok());
    }
}
