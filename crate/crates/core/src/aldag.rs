//! Compression of a staged tree into an asymmetry-labeled DAG (ALDAG).
//!
//! For the variable at depth `i`, the staging is a function of the configuration of
//! `order[..i]`. A predecessor is dropped when that function is invariant in its
//! coordinate for every fixed value of the other coordinates. Invariances in single
//! coordinates compose (change one coordinate at a time along a path), so all
//! invariant predecessors can be dropped together and the remaining ones are exactly
//! the parents. Each parent edge is then labeled by the kind of stage equalities it
//! takes part in.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::staged_tree::{StageAssignment, StagedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLabel {
    Symmetric,
    ContextSpecific,
    Partial,
    Local,
}

impl EdgeLabel {
    pub const ALL: [EdgeLabel; 4] = [
        EdgeLabel::Symmetric,
        EdgeLabel::ContextSpecific,
        EdgeLabel::Partial,
        EdgeLabel::Local,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeLabel::Symmetric => "symmetric",
            EdgeLabel::ContextSpecific => "context_specific",
            EdgeLabel::Partial => "partial",
            EdgeLabel::Local => "local",
        }
    }

    pub fn color(self) -> &'static str {
        match self {
            EdgeLabel::Symmetric => "black",
            EdgeLabel::ContextSpecific => "red",
            EdgeLabel::Partial => "blue",
            EdgeLabel::Local => "green",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A staging viewed as a function of the values of `vars` (first var most significant).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFunction {
    pub vars: Vec<usize>,
    pub radices: Vec<usize>,
    pub stages: Vec<usize>,
}

impl StageFunction {
    pub fn from_tree_depth(tree: &StagedTree, depth: usize) -> Self {
        let space = tree.context_space(depth);
        StageFunction {
            vars: space.vars().to_vec(),
            radices: space.radices().to_vec(),
            stages: tree.staging(depth).as_slice().to_vec(),
        }
    }

    fn stride(&self, t: usize) -> usize {
        self.radices[t + 1..].iter().product()
    }

    fn digit(&self, c: usize, t: usize) -> usize {
        (c / self.stride(t)) % self.radices[t]
    }

    /// True when the stage never changes with coordinate `t` alone.
    pub fn invariant_in(&self, t: usize) -> bool {
        let stride = self.stride(t);
        let r = self.radices[t];
        (0..self.stages.len()).all(|c| {
            let base = c - ((c / stride) % r) * stride;
            self.stages[c] == self.stages[base]
        })
    }

    /// Restriction to the non-invariant coordinates (positions returned alongside).
    pub fn reduce(&self) -> (Vec<usize>, StageFunction) {
        let keep: Vec<usize> = (0..self.vars.len()).filter(|&t| !self.invariant_in(t)).collect();
        let strides: Vec<usize> = keep.iter().map(|&t| self.stride(t)).collect();
        let radices: Vec<usize> = keep.iter().map(|&t| self.radices[t]).collect();
        let size: usize = radices.iter().product();
        let mut labels = Vec::with_capacity(size);
        for pc in 0..size {
            let mut rem = pc;
            let mut c = 0;
            for k in (0..keep.len()).rev() {
                c += (rem % radices[k]) * strides[k];
                rem /= radices[k];
            }
            labels.push(self.stages[c]);
        }
        let stages = StageAssignment::from_labels(&labels).as_slice().to_vec();
        let reduced = StageFunction {
            vars: keep.iter().map(|&t| self.vars[t]).collect(),
            radices,
            stages,
        };
        (keep, reduced)
    }

    /// Coordinates taking part in equalities that cannot be produced by chaining
    /// single-coordinate equalities: same-stage configurations linked only when they
    /// differ in exactly one coordinate, then every stage that spans several connected
    /// components marks the coordinates that vary across it.
    fn local_coordinates(&self) -> Vec<bool> {
        let n = self.stages.len();
        let m = self.vars.len();
        let mut uf = UnionFind::new(n);
        for c in 0..n {
            for t in 0..m {
                let stride = self.stride(t);
                let dt = self.digit(c, t);
                for v in dt + 1..self.radices[t] {
                    let other = c + (v - dt) * stride;
                    if self.stages[c] == self.stages[other] {
                        uf.union(c, other);
                    }
                }
            }
        }
        let mut by_stage: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for c in 0..n {
            by_stage.entry(self.stages[c]).or_default().push(c);
        }
        let mut marked = vec![false; m];
        for members in by_stage.values() {
            let root = uf.find(members[0]);
            if members.iter().all(|&c| uf.find(c) == root) {
                continue;
            }
            for (t, mark) in marked.iter_mut().enumerate() {
                let d0 = self.digit(members[0], t);
                if members.iter().any(|&c| self.digit(c, t) != d0) {
                    *mark = true;
                }
            }
        }
        marked
    }

    /// Patterns of the partitions of coordinate `t`'s values over each context of the
    /// other coordinates: (some full block, some proper non-singleton block).
    fn block_patterns(&self, t: usize) -> (bool, bool) {
        let stride = self.stride(t);
        let r = self.radices[t];
        let mut full = false;
        let mut proper = false;
        for c in 0..self.stages.len() {
            if self.digit(c, t) != 0 {
                continue;
            }
            let vals: Vec<usize> = (0..r).map(|x| self.stages[c + x * stride]).collect();
            let mut distinct = vals.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() == 1 {
                full = true;
            } else if distinct.len() < r {
                proper = true;
            }
        }
        (full, proper)
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Every equality type found on the edge from coordinate `t`, plus the single label
/// chosen by precedence local > partial > context-specific.
pub fn classify_coordinate(f: &StageFunction, t: usize) -> Result<(EdgeLabel, Vec<EdgeLabel>)> {
    if t >= f.vars.len() {
        return Err(Error::invalid(format!("coordinate {t} out of range")));
    }
    if f.invariant_in(t) {
        return Err(Error::invalid(format!(
            "variable {} is removable and cannot be classified as a parent",
            f.vars[t]
        )));
    }
    let (keep, reduced) = f.reduce();
    let rt = keep.iter().position(|&k| k == t).expect("t is not invariant");
    let local = reduced.local_coordinates()[rt];
    let (full, proper) = reduced.block_patterns(rt);
    let mut detected = Vec::new();
    if full {
        detected.push(EdgeLabel::ContextSpecific);
    }
    if proper {
        detected.push(EdgeLabel::Partial);
    }
    if local {
        detected.push(EdgeLabel::Local);
    }
    let label = detected.iter().copied().max().unwrap_or(EdgeLabel::Symmetric);
    if detected.is_empty() {
        detected.push(EdgeLabel::Symmetric);
    }
    Ok((label, detected))
}

pub fn classify_edge(f: &StageFunction, t: usize) -> Result<EdgeLabel> {
    Ok(classify_coordinate(f, t)?.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AldagEdge {
    pub from: usize,
    pub to: usize,
    pub label: EdgeLabel,
    pub detected_types: Vec<EdgeLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aldag {
    pub variables: Vec<String>,
    /// Edges grouped by child in depth order, parents in depth order.
    pub edges: Vec<AldagEdge>,
}

#[derive(Serialize)]
struct AldagJson<'a> {
    variables: &'a [String],
    edges: Vec<EdgeJson<'a>>,
}

#[derive(Serialize)]
struct EdgeJson<'a> {
    from: &'a str,
    to: &'a str,
    label: EdgeLabel,
    detected_types: &'a [EdgeLabel],
}

/// ALDAG of a staged tree (only the staging matters, not the probabilities).
pub fn compress(tree: &StagedTree) -> Aldag {
    let mut edges = Vec::new();
    for depth in 1..tree.depth() {
        let child = tree.variable_at(depth);
        let f = StageFunction::from_tree_depth(tree, depth);
        for t in 0..f.vars.len() {
            if f.invariant_in(t) {
                continue;
            }
            let (label, detected_types) = classify_coordinate(&f, t).expect("non-invariant coordinate");
            edges.push(AldagEdge {
                from: f.vars[t],
                to: child,
                label,
                detected_types,
            });
        }
    }
    Aldag {
        variables: tree.schema().names().iter().map(|s| s.to_string()).collect(),
        edges,
    }
}

impl Aldag {
    pub fn parents(&self, child: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.to == child).map(|e| e.from).collect()
    }

    pub fn in_degree(&self, child: usize) -> usize {
        self.edges.iter().filter(|e| e.to == child).count()
    }

    pub fn max_in_degree(&self) -> usize {
        (0..self.variables.len()).map(|v| self.in_degree(v)).max().unwrap_or(0)
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&AldagEdge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    /// Edge by variable names.
    pub fn edge_by_name(&self, from: &str, to: &str) -> Option<&AldagEdge> {
        let f = self.variables.iter().position(|v| v == from)?;
        let t = self.variables.iter().position(|v| v == to)?;
        self.edge(f, t)
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = AldagJson {
            variables: &self.variables,
            edges: self
                .edges
                .iter()
                .map(|e| EdgeJson {
                    from: &self.variables[e.from],
                    to: &self.variables[e.to],
                    label: e.label,
                    detected_types: &e.detected_types,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    pub fn to_dot(&self) -> String {
        self.to_dot_with(&DotAnnotations::default())
    }

    /// DOT rendering; evidence nodes are filled gray and node notes are appended to labels.
    pub fn to_dot_with(&self, notes: &DotAnnotations) -> String {
        let mut out = String::from("digraph aldag {\n  node [shape=ellipse];\n");
        for (i, name) in self.variables.iter().enumerate() {
            let mut label = escape(name);
            if let Some(note) = notes.node_notes.get(&i) {
                label.push_str("\\n");
                label.push_str(&escape(note));
            }
            if notes.evidence.contains(&i) {
                let _ = writeln!(out, "  n{i} [label=\"{label}\", style=filled, fillcolor=gray];");
            } else {
                let _ = writeln!(out, "  n{i} [label=\"{label}\"];");
            }
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  n{} -> n{} [color={}, tooltip=\"{}\"];",
                e.from,
                e.to,
                e.label.color(),
                e.label
            );
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct DotAnnotations {
    pub evidence: Vec<usize>,
    pub node_notes: BTreeMap<usize, String>,
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Staging of one variable shown over its ALDAG parents only.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceSubtree {
    pub child: usize,
    /// Parents in depth order.
    pub parents: Vec<usize>,
    pub radices: Vec<usize>,
    /// Stage per parent configuration (first parent most significant).
    pub staging: StageAssignment,
    pub probs: Vec<Vec<f64>>,
}

pub fn dependence_subtree(tree: &StagedTree, aldag: &Aldag, child: usize) -> Result<DependenceSubtree> {
    let depth = tree.order().positions()[child];
    let f = StageFunction::from_tree_depth(tree, depth);
    let parents = aldag.parents(child);
    let keep: Vec<usize> = parents
        .iter()
        .map(|p| {
            f.vars
                .iter()
                .position(|v| v == p)
                .ok_or_else(|| Error::invalid("ALDAG parent is not a predecessor in the tree"))
        })
        .collect::<Result<_>>()?;
    for t in 0..f.vars.len() {
        if !keep.contains(&t) && !f.invariant_in(t) {
            return Err(Error::invalid(format!(
                "ALDAG omits parent {} of {}",
                f.vars[t], child
            )));
        }
    }
    let radices: Vec<usize> = keep.iter().map(|&t| f.radices[t]).collect();
    let strides: Vec<usize> = keep.iter().map(|&t| f.stride(t)).collect();
    let size: usize = radices.iter().product();
    let mut contexts = Vec::with_capacity(size);
    for pc in 0..size {
        let mut rem = pc;
        let mut c = 0;
        for k in (0..keep.len()).rev() {
            c += (rem % radices[k]) * strides[k];
            rem /= radices[k];
        }
        contexts.push(c);
    }
    let tree_stages: Vec<usize> = contexts.iter().map(|&c| tree.staging(depth).stage_of(c)).collect();
    let staging = StageAssignment::from_labels(&tree_stages);
    let probs = contexts.iter().map(|&c| tree.context_probs(depth, c).to_vec()).collect();
    Ok(DependenceSubtree {
        child,
        parents,
        radices,
        staging,
        probs,
    })
}

const PALETTE: [&str; 12] = [
    "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#ffff33", "#a65628", "#f781bf", "#999999",
    "#66c2a5", "#fc8d62", "#8da0cb",
];

fn stage_color(stage: usize) -> String {
    if stage < PALETTE.len() {
        PALETTE[stage].to_string()
    } else {
        // golden-angle hue walk for large stagings
        let h = (stage as f64 * 0.618_033_988_75).fract();
        format!("{h:.3} 0.6 0.9")
    }
}

const MAX_DOT_VERTICES: usize = 20_000;

impl DependenceSubtree {
    pub fn to_dot(&self, tree: &StagedTree) -> String {
        let schema = tree.schema();
        let child = schema.variable(self.child);
        let mut out = format!("digraph subtree {{\n  rankdir=LR;\n  label=\"{}\";\n", escape(&child.name));
        out.push_str("  node [shape=circle, style=filled, label=\"\"];\n");
        // internal vertices over the parents, then one colored vertex per configuration
        let mut level_nodes = vec![String::from("r")];
        if self.parents.is_empty() {
            let _ = writeln!(out, "  r [fillcolor=\"{}\"];", stage_color(0));
        } else {
            out.push_str("  r [fillcolor=white];\n");
        }
        for (k, &pv) in self.parents.iter().enumerate() {
            let var = schema.variable(pv);
            let mut next = Vec::new();
            for (pi, parent) in level_nodes.iter().enumerate() {
                for (lv, level) in var.levels.iter().enumerate() {
                    let id = format!("{parent}_{lv}");
                    let idx = pi * var.n_levels() + lv;
                    let fill = if k + 1 == self.parents.len() {
                        stage_color(self.staging.stage_of(idx))
                    } else {
                        "white".to_string()
                    };
                    let _ = writeln!(out, "  {id} [fillcolor=\"{fill}\"];");
                    let _ = writeln!(out, "  {parent} -> {id} [label=\"{}\"];", escape(level));
                    next.push(id);
                }
            }
            level_nodes = next;
        }
        out.push_str("}\n");
        out
    }
}

/// DOT rendering of the full tree; vertices are colored by stage within each depth.
pub fn staged_tree_dot(tree: &StagedTree) -> Result<String> {
    let total: usize = (0..tree.depth()).map(|j| tree.n_contexts(j)).sum();
    if total > MAX_DOT_VERTICES {
        return Err(Error::TooLarge {
            what: "staged tree rendering".into(),
            size: total as u128,
            limit: MAX_DOT_VERTICES as u128,
        });
    }
    let schema = tree.schema();
    let mut out = String::from("digraph staged_tree {\n  rankdir=LR;\n  node [shape=circle, style=filled, label=\"\"];\n");
    for j in 0..tree.depth() {
        let var = schema.variable(tree.variable_at(j));
        let l = var.n_levels();
        for c in 0..tree.n_contexts(j) {
            let s = tree.staging(j).stage_of(c);
            let _ = writeln!(
                out,
                "  v{j}_{c} [fillcolor=\"{}\", tooltip=\"{}: stage {s}\"];",
                stage_color(s),
                escape(&var.name)
            );
            let probs = tree.context_probs(j, c);
            for lv in 0..l {
                let child = if j + 1 < tree.depth() {
                    format!("v{}_{}", j + 1, c * l + lv)
                } else {
                    let id = format!("leaf_{}", c * l + lv);
                    let _ = writeln!(out, "  {id} [shape=point, fillcolor=black];");
                    id
                };
                let _ = writeln!(
                    out,
                    "  v{j}_{c} -> {child} [label=\"{} {:.3}\"];",
                    escape(&var.levels[lv]),
                    probs[lv]
                );
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sf(radices: &[usize], stages: &[usize]) -> StageFunction {
        StageFunction {
            vars: (0..radices.len()).collect(),
            radices: radices.to_vec(),
            stages: stages.to_vec(),
        }
    }

    #[test]
    fn invariance_detection() {
        // stage depends only on the second coordinate
        let f = sf(&[2, 3], &[0, 1, 2, 0, 1, 2]);
        assert!(f.invariant_in(0));
        assert!(!f.invariant_in(1));
        let (keep, r) = f.reduce();
        assert_eq!(keep, vec![1]);
        assert_eq!(r.stages, vec![0, 1, 2]);
    }

    #[test]
    fn removable_coordinate_is_rejected() {
        let f = sf(&[2, 3], &[0, 1, 2, 0, 1, 2]);
        assert!(classify_edge(&f, 0).is_err());
        assert_eq!(classify_edge(&f, 1).unwrap(), EdgeLabel::Symmetric);
    }

    #[test]
    fn partial_on_ternary_parent() {
        let f = sf(&[3], &[0, 0, 1]);
        assert_eq!(classify_edge(&f, 0).unwrap(), EdgeLabel::Partial);
    }

    #[test]
    fn labels_invariant_under_stage_relabeling() {
        let a = sf(&[2, 2], &[0, 1, 2, 2]);
        let b = sf(&[2, 2], &[5, 9, 1, 1]);
        for t in 0..2 {
            assert_eq!(classify_edge(&a, t).unwrap(), classify_edge(&b, t).unwrap());
        }
    }

    #[test]
    fn local_only_when_not_chained() {
        // (0,0)=(1,1) directly, but also (0,0)=(0,1)=(1,1) by single steps: not local
        let chained = sf(&[2, 2], &[0, 0, 1, 0]);
        assert_ne!(classify_edge(&chained, 0).unwrap(), EdgeLabel::Local);
        let diagonal = sf(&[2, 2], &[0, 1, 2, 0]);
        assert_eq!(classify_edge(&diagonal, 0).unwrap(), EdgeLabel::Local);
        assert_eq!(classify_edge(&diagonal, 1).unwrap(), EdgeLabel::Local);
    }

    #[test]
    fn local_marks_only_varying_coordinates() {
        // three binary parents; configs (0,0,0) and (1,1,0) share a stage with no chain.
        let mut stages: Vec<usize> = (0..8).collect();
        stages[6] = 0; // (1,1,0)
        let f = sf(&[2, 2, 2], &stages);
        assert_eq!(classify_edge(&f, 0).unwrap(), EdgeLabel::Local);
        assert_eq!(classify_edge(&f, 1).unwrap(), EdgeLabel::Local);
        assert_eq!(classify_edge(&f, 2).unwrap(), EdgeLabel::Symmetric);
    }
}
