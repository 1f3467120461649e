//! Discrete Bayesian networks and their staged-tree encoding.

use std::collections::HashMap;

use crate::context::ContextSpace;
use crate::dataset::{Schema, Variable};
use crate::error::{Error, Result};
use crate::staged_tree::{StageAssignment, StagedTree, VariableOrder};

/// A DAG with one conditional probability table per variable.
///
/// `cpts[i]` has one row per configuration of `parents[i]`, indexed with the first
/// listed parent as the most significant digit; each row is a distribution over the
/// levels of variable `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesianNetwork {
    schema: Schema,
    parents: Vec<Vec<usize>>,
    cpts: Vec<Vec<Vec<f64>>>,
}

impl BayesianNetwork {
    pub fn new(schema: Schema, parents: Vec<Vec<usize>>, cpts: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let p = schema.len();
        if parents.len() != p || cpts.len() != p {
            return Err(Error::invalid("one parent list and one CPT per variable are required"));
        }
        let counts = schema.level_counts();
        for i in 0..p {
            let name = &schema.variable(i).name;
            for &q in &parents[i] {
                if q >= p || q == i {
                    return Err(Error::invalid(format!("invalid parent index {q} for `{name}`")));
                }
            }
            let rows: usize = parents[i].iter().map(|&q| counts[q]).product();
            if cpts[i].len() != rows {
                return Err(Error::invalid(format!(
                    "CPT of `{name}` has {} rows, expected {rows}",
                    cpts[i].len()
                )));
            }
            for row in &cpts[i] {
                let total: f64 = row.iter().sum();
                if row.len() != counts[i] || row.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("CPT of `{name}` has an invalid row {row:?}")));
                }
            }
        }
        let bn = BayesianNetwork { schema, parents, cpts };
        bn.topological_order()?;
        Ok(bn)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn cpt(&self, i: usize) -> &[Vec<f64>] {
        &self.cpts[i]
    }

    /// Kahn's algorithm, always releasing the smallest available index first.
    pub fn topological_order(&self) -> Result<VariableOrder> {
        let p = self.schema.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut children = vec![Vec::new(); p];
        for (i, ps) in self.parents.iter().enumerate() {
            for &q in ps {
                children[q].push(i);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..p).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(p);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() < p {
            let stuck = (0..p).find(|&i| indegree[i] > 0).expect("some vertex left");
            return Err(Error::Cyclic(self.schema.variable(stuck).name.clone()));
        }
        VariableOrder::new(order)
    }

    /// Encodes the network as a staged tree over `order` (a topological order by default).
    ///
    /// Contexts sharing parent values share a stage. With `merge_equal_rows`, contexts
    /// whose CPT rows are bit-identical are merged as well, so the staging records every
    /// equality present in the tables.
    pub fn to_staged_tree(&self, order: Option<&VariableOrder>, merge_equal_rows: bool) -> Result<StagedTree> {
        let order = match order {
            Some(o) => o.clone(),
            None => self.topological_order()?,
        };
        if order.len() != self.schema.len() {
            return Err(Error::invalid("order length does not match the schema"));
        }
        let pos = order.positions();
        for (i, ps) in self.parents.iter().enumerate() {
            if let Some(&q) = ps.iter().find(|&&q| pos[q] > pos[i]) {
                return Err(Error::invalid(format!(
                    "order places `{}` after its child `{}`",
                    self.schema.variable(q).name,
                    self.schema.variable(i).name
                )));
            }
        }
        let counts = self.schema.level_counts();
        let mut stagings = Vec::with_capacity(order.len());
        let mut probs = Vec::with_capacity(order.len());
        for j in 0..order.len() {
            let v = order.as_slice()[j];
            let space = ContextSpace::new(&order.as_slice()[..j], &counts)?;
            let parent_space = ContextSpace::new(&self.parents[v], &counts)?;
            let parent_pos: Vec<usize> = self.parents[v].iter().map(|&q| pos[q]).collect();
            let rows: Vec<usize> = (0..space.len())
                .map(|c| {
                    let digits = space.decode(c);
                    parent_space.encode(&parent_pos.iter().map(|&k| digits[k]).collect::<Vec<_>>())
                })
                .collect();
            let staging = if merge_equal_rows {
                let mut row_class: HashMap<Vec<u64>, usize> = HashMap::new();
                let classes: Vec<usize> = rows
                    .iter()
                    .map(|&r| {
                        let key: Vec<u64> = self.cpts[v][r].iter().map(|x| x.to_bits()).collect();
                        let next = row_class.len();
                        *row_class.entry(key).or_insert(next)
                    })
                    .collect();
                StageAssignment::from_labels(&classes)
            } else {
                StageAssignment::from_labels(&rows)
            };
            let mut stage_probs = vec![Vec::new(); staging.n_stages()];
            for (c, &r) in rows.iter().enumerate() {
                let s = staging.stage_of(c);
                if stage_probs[s].is_empty() {
                    stage_probs[s] = self.cpts[v][r].clone();
                }
            }
            stagings.push(staging);
            probs.push(stage_probs);
        }
        StagedTree::new(self.schema.clone(), order, stagings, probs)
    }

    /// `P(x)` as the product of CPT entries, `x` in schema order.
    pub fn joint_probability(&self, x: &[usize]) -> f64 {
        let counts = self.schema.level_counts();
        (0..self.schema.len())
            .map(|i| {
                let row = self.parents[i].iter().fold(0, |acc, &q| acc * counts[q] + x[q]);
                self.cpts[i][row][x[i]]
            })
            .product()
    }
}

/// Staged tree of a BN where CPT-row equalities become stage merges.
pub fn encode_bn(bn: &BayesianNetwork, order: Option<&VariableOrder>) -> Result<StagedTree> {
    bn.to_staged_tree(order, true)
}

/// Railway satisfaction network: Country → Length, Country → Income,
/// (Length, Income) → Satisfaction, levels sorted alphabetically.
///
/// With `local = true` the Satisfaction table only equates the rows
/// (Length=High, Income=High) and (Length=Low, Income=Low).
pub fn railway_network(local: bool) -> BayesianNetwork {
    let schema = Schema::new(vec![
        Variable::new("Country", ["EE", "NE", "SE", "WE"]),
        Variable::new("Length", ["High", "Low"]),
        Variable::new("Income", ["High", "Low"]),
        Variable::new("Satisfaction", ["High", "Low", "Medium"]),
    ])
    .expect("valid schema");
    let satisfaction = if local {
        vec![vec![0.2, 0.5, 0.3], vec![0.3, 0.3, 0.4], vec![0.1, 0.7, 0.2], vec![0.2, 0.5, 0.3]]
    } else {
        vec![vec![0.5, 0.1, 0.4], vec![0.3, 0.3, 0.4], vec![0.2, 0.5, 0.3], vec![0.2, 0.5, 0.3]]
    };
    BayesianNetwork::new(
        schema,
        vec![vec![], vec![0], vec![0], vec![1, 2]],
        vec![
            vec![vec![0.35, 0.25, 0.15, 0.25]],
            vec![vec![0.4, 0.6], vec![0.7, 0.3], vec![0.4, 0.6], vec![0.7, 0.3]],
            vec![vec![0.3, 0.7], vec![0.8, 0.2], vec![0.5, 0.5], vec![0.8, 0.2]],
            satisfaction,
        ],
    )
    .expect("valid network")
}
