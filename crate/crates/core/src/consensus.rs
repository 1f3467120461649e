//! Bootstrap aggregation of orders, stagings and ALDAG edges.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aldag::{compress, escape, Aldag, EdgeLabel};
use crate::dataset::{Dataset, ResamplePlan};
use crate::error::{Error, Result};
use crate::learning::{learn_tree, order_search, LearnConfig, OrderSearchConfig};
use crate::staged_tree::{FitConfig, StageAssignment, StagedTree, VariableOrder};

/// Largest context count for which a dissimilarity matrix is built.
pub const MAX_DISSIMILARITY_CONTEXTS: usize = 4096;

pub const DEFAULT_CUT: f64 = 0.5;
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.5;

// ---------------------------------------------------------------------------
// Order votes

/// Pairwise precedence tallies over `M` replicate orders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderVoteMatrix {
    /// `counts[j][k]`: replicates in which `j` precedes `k`.
    counts: Vec<Vec<u64>>,
    m: u64,
}

impl OrderVoteMatrix {
    pub fn from_orders(p: usize, orders: &[VariableOrder]) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::invalid("at least one order is required"));
        }
        let mut counts = vec![vec![0u64; p]; p];
        for o in orders {
            if o.len() != p {
                return Err(Error::invalid("orders over different variable counts"));
            }
            let s = o.as_slice();
            for a in 0..p {
                for b in a + 1..p {
                    counts[s[a]][s[b]] += 1;
                }
            }
        }
        Ok(OrderVoteMatrix {
            counts,
            m: orders.len() as u64,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.counts.len()
    }

    pub fn replicates(&self) -> u64 {
        self.m
    }

    pub fn count(&self, j: usize, k: usize) -> u64 {
        self.counts[j][k]
    }

    /// Fraction of replicates in which `j` precedes `k` (0 on the diagonal).
    ///
    /// Should the two quotients fail to sum to exactly one, the minority side is
    /// taken as the complement of the majority side, so `n_jk(j, k) + n_jk(k, j)`
    /// is always `1.0`.
    pub fn n_jk(&self, j: usize, k: usize) -> f64 {
        if j == k {
            return 0.0;
        }
        let a = self.counts[j][k];
        let m = self.m as f64;
        let x = a as f64 / m;
        let y = (self.m - a) as f64 / m;
        if x + y == 1.0 || 2 * a >= self.m {
            x
        } else {
            1.0 - y
        }
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let p = self.n_vars();
        (0..p).map(|j| (0..p).map(|k| self.n_jk(j, k)).collect()).collect()
    }

    /// `j` beats `k` when it precedes `k` in at least half of the replicates.
    pub fn wins(&self, j: usize, k: usize) -> bool {
        j != k && 2 * self.counts[j][k] >= self.m
    }

    /// CSV with a header row of variable names and one labeled row per variable.
    pub fn to_csv(&self, names: &[&str]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (j, name) in names.iter().enumerate() {
            let mut rec = vec![name.to_string()];
            rec.extend((0..self.n_vars()).map(|k| self.n_jk(j, k).to_string()));
            w.write_record(&rec)?;
        }
        into_string(w)
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    Index,
    /// Tied Copeland scores are shuffled with this seed.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusOrder {
    pub order: VariableOrder,
    /// Copeland score per variable (schema index).
    pub scores: Vec<usize>,
    /// Some strict pairwise majority is contradicted by the returned order.
    pub cyclic: bool,
}

/// Copeland linearization of the vote matrix, ties by variable index.
pub fn consensus_order(votes: &OrderVoteMatrix) -> ConsensusOrder {
    consensus_order_with(votes, TieBreak::Index)
}

pub fn consensus_order_with(votes: &OrderVoteMatrix, ties: TieBreak) -> ConsensusOrder {
    let p = votes.n_vars();
    let scores: Vec<usize> = (0..p).map(|j| (0..p).filter(|&k| votes.wins(j, k)).count()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
    if let TieBreak::Random(seed) = ties {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut start = 0;
        while start < p {
            let end = (start..p).find(|&i| scores[order[i]] != scores[order[start]]).unwrap_or(p);
            order[start..end].shuffle(&mut rng);
            start = end;
        }
    }
    let cyclic = (0..p).any(|a| (a + 1..p).any(|b| 2 * votes.count(order[b], order[a]) > votes.replicates()));
    ConsensusOrder {
        order: VariableOrder::new(order).expect("permutation"),
        scores,
        cyclic,
    }
}

/// One optimal order per bootstrap replicate.
pub fn bootstrap_order_samples(
    d: &Dataset,
    plan: &ResamplePlan,
    cfg: &LearnConfig,
    search: &OrderSearchConfig,
) -> Result<Vec<VariableOrder>> {
    (0..plan.replicates())
        .into_par_iter()
        .map(|i| Ok(order_search(&plan.replicate(d, i), cfg, search)?.order))
        .collect()
}

pub fn bootstrap_orders(
    d: &Dataset,
    plan: &ResamplePlan,
    cfg: &LearnConfig,
    search: &OrderSearchConfig,
) -> Result<OrderVoteMatrix> {
    OrderVoteMatrix::from_orders(d.n_vars(), &bootstrap_order_samples(d, plan, cfg, search)?)
}

// ---------------------------------------------------------------------------
// Dissimilarities and clustering

/// Co-clustering disagreement counts between the contexts of one depth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    n: usize,
    m: u64,
    /// Upper triangle, row-major, `a < b`.
    disagree: Vec<u32>,
}

impl DissimilarityMatrix {
    pub fn from_stagings<'a>(stagings: impl IntoIterator<Item = &'a StageAssignment>) -> Result<Self> {
        let mut it = stagings.into_iter().peekable();
        let n = it
            .peek()
            .map(|s| s.n_contexts())
            .ok_or_else(|| Error::invalid("at least one staging is required"))?;
        if n > MAX_DISSIMILARITY_CONTEXTS {
            return Err(Error::TooLarge {
                what: "dissimilarity matrix contexts".into(),
                size: n as u128,
                limit: MAX_DISSIMILARITY_CONTEXTS as u128,
            });
        }
        let mut disagree = vec![0u32; n * n.saturating_sub(1) / 2];
        let mut m = 0;
        for s in it {
            if s.n_contexts() != n {
                return Err(Error::invalid("stagings over different context counts"));
            }
            let st = s.as_slice();
            let mut idx = 0;
            for a in 0..n {
                for b in a + 1..n {
                    disagree[idx] += (st[a] != st[b]) as u32;
                    idx += 1;
                }
            }
            m += 1;
        }
        Ok(DissimilarityMatrix { n, m, disagree })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn replicates(&self) -> u64 {
        self.m
    }

    fn pos(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        a * (2 * self.n - a - 1) / 2 + (b - a - 1)
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        if a == b {
            0.0
        } else {
            self.disagree[self.pos(a, b)] as f64 / self.m as f64
        }
    }

    pub fn to_dense(&self) -> DenseDissimilarity {
        DenseDissimilarity {
            values: (0..self.n).map(|a| (0..self.n).map(|b| self.get(a, b)).collect()).collect(),
        }
    }
}

/// A symmetric matrix with zero diagonal and entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseDissimilarity {
    values: Vec<Vec<f64>>,
}

impl DenseDissimilarity {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let n = values.len();
        for (a, row) in values.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid("dissimilarity matrix is not square"));
            }
            for (b, &x) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&x) || x != values[b][a] || (a == b && x != 0.0) {
                    return Err(Error::invalid(format!("invalid dissimilarity entry ({a}, {b}) = {x}")));
                }
            }
        }
        Ok(DenseDissimilarity { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a][b]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            _ => Err(Error::invalid(format!("unknown linkage `{s}` (expected average, complete or single)"))),
        }
    }
}

impl std::fmt::Display for Linkage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
            Linkage::Single => "single",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    /// Smallest leaf of each merged cluster.
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

/// Merge history of agglomerative clustering, sorted by height.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Clusters after applying every merge whose height is at most `height`.
    pub fn cut(&self, height: f64) -> StageAssignment {
        let mut parent: Vec<usize> = (0..self.n_leaves).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for m in self.merges.iter().filter(|m| m.height <= height) {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        let labels: Vec<usize> = (0..self.n_leaves).map(|x| find(&mut parent, x)).collect();
        StageAssignment::from_labels(&labels)
    }

    pub fn max_height(&self) -> f64 {
        self.merges.iter().map(|m| m.height).fold(0.0, f64::max)
    }

    /// Leaves in dendrogram order (left to right), for heatmap rows.
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut clusters: BTreeMap<usize, Vec<usize>> = (0..self.n_leaves).map(|i| (i, vec![i])).collect();
        for m in &self.merges {
            let (lo, hi) = (m.a.min(m.b), m.a.max(m.b));
            let mut left = clusters.remove(&lo).expect("active cluster");
            left.extend(clusters.remove(&hi).expect("active cluster"));
            clusters.insert(lo, left);
        }
        clusters.into_values().flatten().collect()
    }
}

/// Agglomerative clustering by the nearest-neighbor chain algorithm.
///
/// Ties prefer the previous chain element, then the smallest cluster id, so the
/// result is deterministic.
pub fn cluster(d: &DenseDissimilarity, linkage: Linkage) -> Dendrogram {
    let n = d.len();
    let mut dist: Vec<Vec<f64>> = d.rows().to_vec();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut min_leaf: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("active cluster"));
        }
        let top = *chain.last().expect("non-empty chain");
        let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
        let mut best = prev;
        let mut best_d = prev.map_or(f64::INFINITY, |p| dist[top][p]);
        for c in 0..n {
            if active[c] && c != top && dist[top][c] < best_d {
                best = Some(c);
                best_d = dist[top][c];
            }
        }
        let nn = best.expect("another active cluster");
        if Some(nn) == prev {
            chain.pop();
            chain.pop();
            let (keep, gone) = (top.min(nn), top.max(nn));
            merges.push(Merge {
                a: min_leaf[keep],
                b: min_leaf[gone],
                height: best_d,
                size: size[keep] + size[gone],
            });
            for c in 0..n {
                if active[c] && c != keep && c != gone {
                    let (dk, dg) = (dist[keep][c], dist[gone][c]);
                    let v = match linkage {
                        Linkage::Average => {
                            (size[keep] as f64 * dk + size[gone] as f64 * dg) / (size[keep] + size[gone]) as f64
                        }
                        Linkage::Complete => dk.max(dg),
                        Linkage::Single => dk.min(dg),
                    };
                    dist[keep][c] = v;
                    dist[c][keep] = v;
                }
            }
            size[keep] += size[gone];
            min_leaf[keep] = min_leaf[keep].min(min_leaf[gone]);
            active[gone] = false;
            remaining -= 1;
        } else {
            chain.push(nn);
        }
    }
    merges.sort_by(|x, y| x.height.total_cmp(&y.height));
    Dendrogram { n_leaves: n, merges }
}

/// Consensus stages: cut the dendrogram of `d` at `cut`.
pub fn consensus_staging(d: &DenseDissimilarity, cut: f64, linkage: Linkage) -> Result<StageAssignment> {
    if !(cut > 0.0 && cut < 1.0) {
        return Err(Error::invalid(format!("cut height {cut} must lie in (0, 1)")));
    }
    Ok(cluster(d, linkage).cut(cut))
}

// ---------------------------------------------------------------------------
// Staging ensembles

/// Replicate stagings for a fixed order and their per-depth dissimilarities.
#[derive(Debug, Clone, PartialEq)]
pub struct StagingEnsemble {
    pub order: VariableOrder,
    /// `replicates[i][j]`: staging of depth `j` in replicate `i`.
    pub replicates: Vec<Vec<StageAssignment>>,
    /// Parent sets the search was restricted to, per replicate (schema index).
    pub parent_sets: Vec<Vec<Vec<usize>>>,
    /// Best-replicate BIC on its own resample, per replicate.
    pub replicate_bic: Vec<f64>,
    pub dissimilarities: Vec<DissimilarityMatrix>,
}

impl StagingEnsemble {
    pub fn from_replicates(order: VariableOrder, replicates: Vec<Vec<StageAssignment>>) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::invalid("at least one replicate is required"));
        }
        let depth = order.len();
        if replicates.iter().any(|r| r.len() != depth) {
            return Err(Error::invalid("replicate staging count does not match the order"));
        }
        let dissimilarities = (0..depth)
            .map(|j| DissimilarityMatrix::from_stagings(replicates.iter().map(|r| &r[j])))
            .collect::<Result<Vec<_>>>()?;
        let m = replicates.len();
        Ok(StagingEnsemble {
            order,
            replicates,
            parent_sets: vec![Vec::new(); m],
            replicate_bic: vec![f64::NAN; m],
            dissimilarities,
        })
    }

    pub fn n_replicates(&self) -> usize {
        self.replicates.len()
    }

    /// Column `i` of `Z_j` is `self.z(j)[i]`.
    pub fn z(&self, depth: usize) -> Vec<&[usize]> {
        self.replicates.iter().map(|r| r[depth].as_slice()).collect()
    }

    pub fn consensus_stagings(&self, cut: f64, linkage: Linkage) -> Result<Vec<StageAssignment>> {
        self.dissimilarities
            .iter()
            .map(|d| consensus_staging(&d.to_dense(), cut, linkage))
            .collect()
    }

    /// ALDAG of every replicate tree.
    pub fn aldags(&self, schema: &crate::dataset::Schema) -> Result<Vec<Aldag>> {
        self.replicates
            .iter()
            .map(|st| Ok(compress(&StagedTree::unfitted(schema.clone(), self.order.clone(), st.clone())?)))
            .collect()
    }
}

pub fn bootstrap_stagings(d: &Dataset, order: &VariableOrder, plan: &ResamplePlan, cfg: &LearnConfig) -> Result<StagingEnsemble> {
    let learned = (0..plan.replicates())
        .into_par_iter()
        .map(|i| {
            let r = plan.replicate(d, i);
            let lt = learn_tree(&r, order, cfg)?;
            let bic = lt.tree.bic(&r)?;
            Ok((lt.tree.stagings().to_vec(), lt.parent_sets, bic))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stagings = Vec::with_capacity(learned.len());
    let mut parents = Vec::with_capacity(learned.len());
    let mut bics = Vec::with_capacity(learned.len());
    for (s, p, b) in learned {
        stagings.push(s);
        parents.push(p);
        bics.push(b);
    }
    let mut ens = StagingEnsemble::from_replicates(order.clone(), stagings)?;
    ens.parent_sets = parents;
    ens.replicate_bic = bics;
    Ok(ens)
}

/// Fits the consensus stagings on the full dataset.
pub fn averaged_tree(d: &Dataset, order: &VariableOrder, stagings: Vec<StageAssignment>, smoothing: f64) -> Result<StagedTree> {
    StagedTree::unfitted(d.schema().clone(), order.clone(), stagings)?.fit(d, FitConfig::new(smoothing)?)
}

// ---------------------------------------------------------------------------
// Edge strengths

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeStrength {
    pub from: usize,
    pub to: usize,
    pub count: u64,
    /// Replicates carrying each label, in [`EdgeLabel::ALL`] order.
    pub label_counts: [u64; 4],
    /// Fraction of replicates containing the edge.
    pub frequency: f64,
    /// Fraction of replicates containing the edge with each label; sums to `frequency`.
    pub label_frequencies: [f64; 4],
}

impl EdgeStrength {
    pub fn dominant_label(&self) -> EdgeLabel {
        let mut best = 0;
        for l in 1..4 {
            if self.label_counts[l] > self.label_counts[best] {
                best = l;
            }
        }
        EdgeLabel::ALL[best]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeStrengthTable {
    pub variables: Vec<String>,
    pub replicates: u64,
    /// Edges present in at least one replicate, sorted by `(from, to)`.
    pub edges: Vec<EdgeStrength>,
}

pub fn edge_strength_table(aldags: &[Aldag]) -> Result<EdgeStrengthTable> {
    let first = aldags.first().ok_or_else(|| Error::invalid("at least one ALDAG is required"))?;
    if aldags.iter().any(|g| g.variables != first.variables) {
        return Err(Error::invalid("ALDAGs are over different variables"));
    }
    let mut tallies: BTreeMap<(usize, usize), [u64; 4]> = BTreeMap::new();
    for g in aldags {
        for e in &g.edges {
            tallies.entry((e.from, e.to)).or_default()[e.label.index()] += 1;
        }
    }
    let m = aldags.len() as u64;
    let edges = tallies
        .into_iter()
        .map(|((from, to), label_counts)| {
            let count = label_counts.iter().sum();
            EdgeStrength {
                from,
                to,
                count,
                label_counts,
                frequency: count as f64 / m as f64,
                label_frequencies: label_counts.map(|c| c as f64 / m as f64),
            }
        })
        .collect();
    Ok(EdgeStrengthTable {
        variables: first.variables.clone(),
        replicates: m,
        edges,
    })
}

impl EdgeStrengthTable {
    pub fn get(&self, from: usize, to: usize) -> Option<&EdgeStrength> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    /// Total mass of one label over all edges.
    pub fn label_mass(&self, label: EdgeLabel) -> u64 {
        self.edges.iter().map(|e| e.label_counts[label.index()]).sum()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["from", "to", "frequency", "symmetric", "context_specific", "partial", "local"])?;
        for e in &self.edges {
            let mut rec = vec![
                self.variables[e.from].clone(),
                self.variables[e.to].clone(),
                e.frequency.to_string(),
            ];
            rec.extend(e.label_frequencies.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        into_string(w)
    }

    /// Edges with frequency at least `threshold`, colored by their most frequent label.
    pub fn to_dot(&self, threshold: f64) -> String {
        let mut s = String::from("digraph aldag {\n  node [shape=ellipse];\n");
        for v in &self.variables {
            s.push_str(&format!("  \"{}\";\n", escape(v)));
        }
        for e in self.edges.iter().filter(|e| e.frequency >= threshold) {
            let lf = e.label_frequencies;
            s.push_str(&format!(
                "  \"{}\" -> \"{}\" [color={}, penwidth={:.2}, label=\"{:.2} ({:.2},{:.2},{:.2},{:.2})\"];\n",
                escape(&self.variables[e.from]),
                escape(&self.variables[e.to]),
                e.dominant_label().color(),
                1.0 + 3.0 * e.frequency,
                e.frequency,
                lf[0],
                lf[1],
                lf[2],
                lf[3]
            ));
        }
        s.push_str("}\n");
        s
    }
}

// ---------------------------------------------------------------------------
// Full pipeline

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusConfig {
    pub plan: ResamplePlan,
    pub learn: LearnConfig,
    pub cut: f64,
    pub linkage: Linkage,
    /// Smoothing for the final fit on the full data.
    pub smoothing: f64,
    pub ties: TieBreak,
}

impl ConsensusConfig {
    pub fn new(replicates: usize, seed: u64) -> Result<Self> {
        Ok(ConsensusConfig {
            plan: ResamplePlan::new(replicates, seed)?,
            learn: LearnConfig::bhc(),
            cut: DEFAULT_CUT,
            linkage: Linkage::Average,
            smoothing: 0.0,
            ties: TieBreak::Index,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConsensusResult {
    /// The averaged tree, fitted on the full data.
    pub tree: StagedTree,
    pub stagings: Vec<StageAssignment>,
    pub ensemble: StagingEnsemble,
    /// Present when the order itself was bootstrapped.
    pub votes: Option<OrderVoteMatrix>,
    pub consensus_order: Option<ConsensusOrder>,
    pub edges: EdgeStrengthTable,
}

/// Bootstrap consensus over a fixed order, or over a bootstrapped order when `order`
/// is `None` (votes first, then stagings along the consensus order).
pub fn bootstrap_consensus(
    d: &Dataset,
    order: Option<&VariableOrder>,
    cfg: &ConsensusConfig,
    search: &OrderSearchConfig,
) -> Result<ConsensusResult> {
    let (order, votes, consensus) = match order {
        Some(o) => (o.clone(), None, None),
        None => {
            let votes = bootstrap_orders(d, &cfg.plan, &cfg.learn, search)?;
            let mut co = consensus_order_with(&votes, cfg.ties);
            if let Some(last) = search.fixed_last {
                let mut o: Vec<usize> = co.order.as_slice().iter().copied().filter(|&v| v != last).collect();
                o.push(last);
                co.order = VariableOrder::new(o)?;
            }
            (co.order.clone(), Some(votes), Some(co))
        }
    };
    let ensemble = bootstrap_stagings(d, &order, &cfg.plan, &cfg.learn)?;
    let stagings = ensemble.consensus_stagings(cfg.cut, cfg.linkage)?;
    let tree = averaged_tree(d, &order, stagings.clone(), cfg.smoothing)?;
    let edges = edge_strength_table(&ensemble.aldags(d.schema())?)?;
    Ok(ConsensusResult {
        tree,
        stagings,
        ensemble,
        votes,
        consensus_order: consensus,
        edges,
    })
}

// ---------------------------------------------------------------------------
// Heatmap export

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapDescription {
    pub title: String,
    pub data_file: String,
    pub labels: Vec<String>,
    /// Row/column permutation that groups clusters, as indices into `labels`.
    pub dendrogram_order: Vec<usize>,
    pub value_range: [f64; 2],
    pub colormap: String,
}

/// Writes `label,v_1,...,v_n` rows (no header) in context order.
pub fn write_matrix_csv<W: Write>(w: W, labels: &[String], d: &DenseDissimilarity) -> Result<()> {
    if labels.len() != d.len() {
        return Err(Error::invalid("one label per row is required"));
    }
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(w);
    for (label, row) in labels.iter().zip(d.rows()) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, DenseDissimilarity)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut it = rec.iter();
        labels.push(it.next().unwrap_or_default().to_string());
        let row = it
            .map(|x| {
                x.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("`{x}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((labels, DenseDissimilarity::new(rows)?))
}

/// Writes the dissimilarity matrix of `depth` to `csv_path` and a plot description
/// next to it (same stem, `.json`).
pub fn staging_heatmap_export(
    tree: &StagedTree,
    depth: usize,
    d: &DenseDissimilarity,
    linkage: Linkage,
    csv_path: impl AsRef<Path>,
) -> Result<HeatmapDescription> {
    let csv_path = csv_path.as_ref();
    if d.len() != tree.n_contexts(depth) {
        return Err(Error::invalid("matrix size does not match the number of contexts"));
    }
    let labels: Vec<String> = (0..d.len()).map(|c| tree.context_label(depth, c)).collect();
    write_matrix_csv(std::fs::File::create(csv_path)?, &labels, d)?;
    let desc = HeatmapDescription {
        title: format!(
            "Bootstrap dissimilarities for {}",
            tree.schema().variable(tree.variable_at(depth)).name
        ),
        data_file: csv_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        labels,
        dendrogram_order: cluster(d, linkage).leaf_order(),
        value_range: [0.0, 1.0],
        colormap: "viridis".into(),
    };
    std::fs::write(csv_path.with_extension("json"), serde_json::to_string_pretty(&desc)?)?;
    Ok(desc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(labels: &[usize]) -> StageAssignment {
        StageAssignment::from_labels(labels)
    }

    #[test]
    fn split_vote() {
        let v = OrderVoteMatrix::from_orders(
            2,
            &[VariableOrder::new(vec![0, 1]).unwrap(), VariableOrder::new(vec![1, 0]).unwrap()],
        )
        .unwrap();
        assert_eq!(v.n_jk(0, 1), 0.5);
        let co = consensus_order(&v);
        assert_eq!(co.order.as_slice(), &[0, 1]);
        assert!(!co.cyclic);
    }

    #[test]
    fn complements_are_exact() {
        for m in 1..=2000u64 {
            for a in 0..=m {
                let mut counts = vec![vec![0, a], vec![m - a, 0]];
                counts[0][0] = 0;
                let v = OrderVoteMatrix { counts, m };
                assert_eq!(v.n_jk(0, 1) + v.n_jk(1, 0), 1.0, "m={m} a={a}");
            }
        }
    }

    #[test]
    fn rock_paper_scissors_is_cyclic() {
        let o = |v: Vec<usize>| VariableOrder::new(v).unwrap();
        let v = OrderVoteMatrix::from_orders(3, &[o(vec![0, 1, 2]), o(vec![1, 2, 0]), o(vec![2, 0, 1])]).unwrap();
        assert_eq!(v.n_jk(0, 1), 2.0 / 3.0);
        let co = consensus_order(&v);
        assert_eq!(co.scores, vec![1, 1, 1]);
        assert_eq!(co.order.as_slice(), &[0, 1, 2]);
        assert!(co.cyclic);
        let r = consensus_order_with(&v, TieBreak::Random(7));
        assert_eq!(r.scores, co.scores);
    }

    #[test]
    fn dissimilarity_counts() {
        let d = DissimilarityMatrix::from_stagings(&[st(&[0, 0, 1]), st(&[0, 1, 1]), st(&[0, 0, 0])]).unwrap();
        assert_eq!(d.get(0, 1), 1.0 / 3.0);
        assert_eq!(d.get(0, 2), 2.0 / 3.0);
        assert_eq!(d.get(2, 1), 1.0 / 3.0);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn extreme_matrices() {
        let zeros = DenseDissimilarity::new(vec![vec![0.0; 3]; 3]).unwrap();
        assert_eq!(consensus_staging(&zeros, 0.5, Linkage::Average).unwrap().n_stages(), 1);
        let ones = DenseDissimilarity::new((0..3).map(|a| (0..3).map(|b| (a != b) as u8 as f64).collect()).collect()).unwrap();
        assert_eq!(consensus_staging(&ones, 0.99, Linkage::Average).unwrap().n_stages(), 3);
        assert!(consensus_staging(&ones, 1.0, Linkage::Average).is_err());
    }

    #[test]
    fn linkages_differ_on_chain() {
        // Points on a line at 0, 0.3, 0.6: single links all at 0.3, complete needs 0.6.
        let v = vec![vec![0.0, 0.3, 0.6], vec![0.3, 0.0, 0.3], vec![0.6, 0.3, 0.0]];
        let d = DenseDissimilarity::new(v).unwrap();
        assert_eq!(consensus_staging(&d, 0.4, Linkage::Single).unwrap().n_stages(), 1);
        assert_eq!(consensus_staging(&d, 0.4, Linkage::Complete).unwrap().n_stages(), 2);
        assert_eq!(consensus_staging(&d, 0.4, Linkage::Average).unwrap().n_stages(), 2);
    }

    #[test]
    fn invalid_matrix_rejected() {
        assert!(DenseDissimilarity::new(vec![vec![0.0, 0.2], vec![0.3, 0.0]]).is_err());
        assert!(DenseDissimilarity::new(vec![vec![0.1]]).is_err());
    }

    #[test]
    fn leaf_order_is_permutation() {
        let v = vec![
            vec![0.0, 0.9, 0.1, 0.9],
            vec![0.9, 0.0, 0.9, 0.1],
            vec![0.1, 0.9, 0.0, 0.9],
            vec![0.9, 0.1, 0.9, 0.0],
        ];
        let den = cluster(&DenseDissimilarity::new(v).unwrap(), Linkage::Average);
        assert_eq!(den.leaf_order(), vec![0, 2, 1, 3]);
        assert_eq!(den.cut(0.5).as_slice(), &[0, 1, 0, 1]);
    }
}
