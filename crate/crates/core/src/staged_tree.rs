//! Staged trees over an ordering of categorical variables.
//!
//! Depth `j` of the tree holds the vertices for variable `order[j]`; its contexts are
//! the configurations of `order[..j]`, indexed by [`ContextSpace`]. A staging assigns
//! each context of a depth to a stage, and every stage carries one conditional
//! distribution over the levels of the depth's variable.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::{
    depth_bic, sorted_sum, stage_probabilities, weighted_log_lik, ContextCounts, ContextSpace,
};
use crate::dataset::{Dataset, Schema};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A permutation of variable indices; position `j` holds the variable at depth `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct VariableOrder(Vec<usize>);

impl VariableOrder {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &v in &perm {
            if v >= perm.len() || seen[v] {
                return Err(Error::invalid(format!("{perm:?} is not a permutation of 0..{}", perm.len())));
            }
            seen[v] = true;
        }
        Ok(VariableOrder(perm))
    }

    pub fn identity(p: usize) -> Self {
        VariableOrder((0..p).collect())
    }

    pub fn from_names(schema: &Schema, names: &[&str]) -> Result<Self> {
        let perm = names.iter().map(|n| schema.index_of(n)).collect::<Result<Vec<_>>>()?;
        if perm.len() != schema.len() {
            return Err(Error::invalid(format!(
                "order lists {} variables, schema has {}",
                perm.len(),
                schema.len()
            )));
        }
        VariableOrder::new(perm)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Depth of each variable (inverse permutation).
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.0.len()];
        for (j, &v) in self.0.iter().enumerate() {
            pos[v] = j;
        }
        pos
    }

    pub fn names<'a>(&self, schema: &'a Schema) -> Vec<&'a str> {
        self.0.iter().map(|&v| schema.variable(v).name.as_str()).collect()
    }
}

impl TryFrom<Vec<usize>> for VariableOrder {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        VariableOrder::new(v)
    }
}

impl From<VariableOrder> for Vec<usize> {
    fn from(o: VariableOrder) -> Self {
        o.0
    }
}

/// Partition of the contexts of one depth; stage ids are contiguous and numbered in
/// order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct StageAssignment {
    stages: Vec<usize>,
    n_stages: usize,
}

impl StageAssignment {
    /// Canonicalizes arbitrary labels (equal label = same stage).
    pub fn from_labels<T: Eq + std::hash::Hash + Copy>(labels: &[T]) -> Self {
        let mut ids = HashMap::new();
        let stages = labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(*l).or_insert(next)
            })
            .collect();
        StageAssignment {
            stages,
            n_stages: ids.len(),
        }
    }

    pub fn singletons(n_contexts: usize) -> Self {
        StageAssignment {
            stages: (0..n_contexts).collect(),
            n_stages: n_contexts,
        }
    }

    pub fn single(n_contexts: usize) -> Self {
        StageAssignment {
            stages: vec![0; n_contexts],
            n_stages: 1,
        }
    }

    pub fn n_contexts(&self) -> usize {
        self.stages.len()
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    #[inline]
    pub fn stage_of(&self, context: usize) -> usize {
        self.stages[context]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.stages
    }

    pub fn same_stage(&self, a: usize, b: usize) -> bool {
        self.stages[a] == self.stages[b]
    }

    /// Contexts of each stage, ascending.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.n_stages];
        for (c, &s) in self.stages.iter().enumerate() {
            blocks[s].push(c);
        }
        blocks
    }
}

impl TryFrom<Vec<usize>> for StageAssignment {
    type Error = Error;
    fn try_from(stages: Vec<usize>) -> Result<Self> {
        let a = StageAssignment::from_labels(&stages);
        if a.stages != stages {
            return Err(Error::invalid(
                "stage ids must be contiguous and numbered by first appearance",
            ));
        }
        Ok(a)
    }
}

impl From<StageAssignment> for Vec<usize> {
    fn from(a: StageAssignment) -> Self {
        a.stages
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Additive pseudo-count per edge.
    pub smoothing: f64,
}

impl FitConfig {
    pub const MLE: FitConfig = FitConfig { smoothing: 0.0 };

    pub fn new(smoothing: f64) -> Result<Self> {
        if !(smoothing >= 0.0) || !smoothing.is_finite() {
            return Err(Error::invalid(format!("smoothing must be finite and >= 0, got {smoothing}")));
        }
        Ok(FitConfig { smoothing })
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig::MLE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagedTree {
    schema: Schema,
    order: VariableOrder,
    stagings: Vec<StageAssignment>,
    probs: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    format_version: u32,
    schema: Schema,
    order: VariableOrder,
    stagings: Vec<StageAssignment>,
    probs: Vec<Vec<Vec<f64>>>,
}

impl StagedTree {
    pub fn new(
        schema: Schema,
        order: VariableOrder,
        stagings: Vec<StageAssignment>,
        probs: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let tree = StagedTree::unfitted(schema, order, stagings)?;
        if probs.len() != tree.depth() {
            return Err(Error::invalid("probability table must have one entry per depth"));
        }
        for (j, depth_probs) in probs.iter().enumerate() {
            let l = tree.n_levels_at(j);
            if depth_probs.len() != tree.stagings[j].n_stages() {
                return Err(Error::invalid(format!(
                    "depth {j}: {} probability vectors for {} stages",
                    depth_probs.len(),
                    tree.stagings[j].n_stages()
                )));
            }
            for (s, p) in depth_probs.iter().enumerate() {
                if p.len() != l {
                    return Err(Error::invalid(format!("depth {j} stage {s}: expected {l} probabilities")));
                }
                let total: f64 = p.iter().sum();
                if p.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "depth {j} stage {s}: probabilities must be non-negative and sum to 1"
                    )));
                }
            }
        }
        Ok(StagedTree { probs, ..tree })
    }

    /// A tree with the given stagings and uniform stage distributions.
    pub fn unfitted(schema: Schema, order: VariableOrder, stagings: Vec<StageAssignment>) -> Result<Self> {
        if order.len() != schema.len() {
            return Err(Error::invalid("order length does not match the schema"));
        }
        if stagings.len() != schema.len() {
            return Err(Error::invalid("one staging per depth is required"));
        }
        let counts = schema.level_counts();
        for (j, st) in stagings.iter().enumerate() {
            let space = ContextSpace::new(&order.as_slice()[..j], &counts)?;
            if st.n_contexts() != space.len() {
                return Err(Error::invalid(format!(
                    "depth {j}: staging covers {} contexts, expected {}",
                    st.n_contexts(),
                    space.len()
                )));
            }
        }
        let probs = stagings
            .iter()
            .enumerate()
            .map(|(j, st)| {
                let l = counts[order.as_slice()[j]];
                vec![vec![1.0 / l as f64; l]; st.n_stages()]
            })
            .collect();
        Ok(StagedTree {
            schema,
            order,
            stagings,
            probs,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn order(&self) -> &VariableOrder {
        &self.order
    }

    pub fn depth(&self) -> usize {
        self.order.len()
    }

    pub fn variable_at(&self, depth: usize) -> usize {
        self.order.as_slice()[depth]
    }

    pub fn n_levels_at(&self, depth: usize) -> usize {
        self.schema.n_levels(self.variable_at(depth))
    }

    pub fn staging(&self, depth: usize) -> &StageAssignment {
        &self.stagings[depth]
    }

    pub fn stagings(&self) -> &[StageAssignment] {
        &self.stagings
    }

    pub fn stage_probs(&self, depth: usize, stage: usize) -> &[f64] {
        &self.probs[depth][stage]
    }

    /// Distribution of the depth's variable at a given context.
    pub fn context_probs(&self, depth: usize, context: usize) -> &[f64] {
        &self.probs[depth][self.stagings[depth].stage_of(context)]
    }

    pub fn context_space(&self, depth: usize) -> ContextSpace {
        ContextSpace::new(&self.order.as_slice()[..depth], &self.schema.level_counts())
            .expect("validated at construction")
    }

    pub fn n_contexts(&self, depth: usize) -> usize {
        self.stagings[depth].n_contexts()
    }

    /// Human-readable context, e.g. `Country=EE|Length=Low`; `root` at depth 0.
    pub fn context_label(&self, depth: usize, context: usize) -> String {
        if depth == 0 {
            return "root".to_string();
        }
        let space = self.context_space(depth);
        space
            .decode(context)
            .iter()
            .zip(space.vars())
            .map(|(&lv, &v)| {
                let var = self.schema.variable(v);
                format!("{}={}", var.name, var.levels[lv])
            })
            .collect::<Vec<_>>()
            .join("|")
    }

    fn check_schema(&self, d: &Dataset) -> Result<()> {
        if d.schema() != &self.schema {
            return Err(Error::Schema("dataset schema does not match the model schema".into()));
        }
        Ok(())
    }

    fn depth_counts(&self, d: &Dataset, depth: usize) -> ContextCounts {
        ContextCounts::tabulate(d, &self.context_space(depth), self.variable_at(depth))
    }

    /// Refits every stage distribution on `d`, pooling the counts of all contexts in a stage.
    pub fn fit(&self, d: &Dataset, cfg: FitConfig) -> Result<StagedTree> {
        self.check_schema(d)?;
        let probs = (0..self.depth())
            .map(|j| {
                let st = &self.stagings[j];
                self.depth_counts(d, j)
                    .pool(st.as_slice(), st.n_stages())
                    .iter()
                    .map(|c| stage_probabilities(c, cfg.smoothing))
                    .collect()
            })
            .collect();
        Ok(StagedTree {
            probs,
            ..self.clone()
        })
    }

    fn depth_terms(&self, d: &Dataset, depth: usize) -> Vec<f64> {
        let st = &self.stagings[depth];
        self.depth_counts(d, depth)
            .pool(st.as_slice(), st.n_stages())
            .iter()
            .zip(&self.probs[depth])
            .map(|(c, p)| weighted_log_lik(c, p))
            .collect()
    }

    /// Log-likelihood contribution of each depth (one per variable).
    pub fn depth_log_likelihoods(&self, d: &Dataset) -> Result<Vec<f64>> {
        self.check_schema(d)?;
        Ok((0..self.depth())
            .map(|j| sorted_sum(&mut self.depth_terms(d, j)))
            .collect())
    }

    /// `Σ_rows ln P(row)`; `-inf` when some row crosses a zero-probability edge.
    pub fn log_likelihood(&self, d: &Dataset) -> Result<f64> {
        Ok(self.depth_log_likelihoods(d)?.iter().sum())
    }

    pub fn depth_n_parameters(&self, depth: usize) -> usize {
        self.stagings[depth].n_stages() * (self.n_levels_at(depth) - 1)
    }

    pub fn n_parameters(&self) -> usize {
        (0..self.depth()).map(|j| self.depth_n_parameters(j)).sum()
    }

    /// `-2·ℓ + d·ln N` (lower is better), accumulated depth by depth.
    pub fn bic(&self, d: &Dataset) -> Result<f64> {
        self.check_schema(d)?;
        let ln_n = (d.n_rows() as f64).ln();
        Ok((0..self.depth())
            .map(|j| depth_bic(self.depth_terms(d, j), self.depth_n_parameters(j), ln_n))
            .sum())
    }

    /// Probability of a full assignment given as level indices in schema order.
    pub fn atom_probability(&self, x: &[usize]) -> Result<f64> {
        if x.len() != self.schema.len() {
            return Err(Error::invalid(format!(
                "assignment has {} values, schema has {} variables",
                x.len(),
                self.schema.len()
            )));
        }
        let mut p = 1.0;
        let mut ctx = 0;
        for j in 0..self.depth() {
            let v = self.variable_at(j);
            let lv = x[v];
            let l = self.schema.n_levels(v);
            if lv >= l {
                return Err(Error::invalid(format!("level index {lv} out of range for `{}`", self.schema.variable(v).name)));
            }
            p *= self.context_probs(j, ctx)[lv];
            ctx = ctx * l + lv;
        }
        Ok(p)
    }

    /// As [`atom_probability`](Self::atom_probability), with level labels.
    pub fn atom_probability_labels(&self, x: &[&str]) -> Result<f64> {
        if x.len() != self.schema.len() {
            return Err(Error::invalid("assignment length does not match the schema"));
        }
        let idx = x
            .iter()
            .enumerate()
            .map(|(v, l)| self.schema.variable(v).level_index(l))
            .collect::<Result<Vec<_>>>()?;
        self.atom_probability(&idx)
    }

    /// Draws `n` rows by walking root-to-leaf paths.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        let p = self.schema.len();
        let mut cells = vec![0u32; n * p];
        for row in cells.chunks_exact_mut(p) {
            let mut ctx = 0;
            for j in 0..self.depth() {
                let probs = self.context_probs(j, ctx);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut lv = probs.len() - 1;
                for (k, &q) in probs.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        lv = k;
                        break;
                    }
                }
                row[self.variable_at(j)] = lv as u32;
                ctx = ctx * probs.len() + lv;
            }
        }
        Dataset::new(self.schema.clone(), cells)
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = ModelRepr {
            format_version: MODEL_FORMAT_VERSION,
            schema: self.schema.clone(),
            order: self.order.clone(),
            stagings: self.stagings.clone(),
            probs: self.probs.clone(),
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: ModelRepr = serde_json::from_str(s)?;
        if repr.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                repr.format_version
            )));
        }
        StagedTree::new(repr.schema, repr.order, repr.stagings, repr.probs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        StagedTree::from_json(&std::fs::read_to_string(path)?)
    }
}

/// The tree in which every context is its own stage, with uniform distributions.
pub fn saturated_tree(schema: &Schema, order: &VariableOrder) -> Result<StagedTree> {
    let counts = schema.level_counts();
    let stagings = (0..order.len())
        .map(|j| {
            ContextSpace::new(&order.as_slice()[..j], &counts).map(|s| StageAssignment::singletons(s.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    StagedTree::unfitted(schema.clone(), order.clone(), stagings)
}
