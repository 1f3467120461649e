//! Categorical data: schemas, encoded datasets, CSV ingest and resampled views.
//!
//! Cells are stored row-major as level indices. Level order within a variable is
//! the lexicographic order of the observed labels, so the same file always
//! produces the same schema.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub levels: Vec<String>,
}

impl Variable {
    pub fn new<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Variable {
            name: name.into(),
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_index(&self, label: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLevel {
                variable: self.name.clone(),
                level: label.to_string(),
            })
    }
}

/// Ordered list of categorical variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr")]
pub struct Schema {
    variables: Vec<Variable>,
}

#[derive(Deserialize)]
struct SchemaRepr {
    variables: Vec<Variable>,
}

impl TryFrom<SchemaRepr> for Schema {
    type Error = Error;
    fn try_from(r: SchemaRepr) -> Result<Self> {
        Schema::new(r.variables)
    }
}

impl Schema {
    pub fn new(variables: Vec<Variable>) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::Schema("schema has no variables".into()));
        }
        let mut names = HashSet::new();
        for v in &variables {
            if !names.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name `{}`", v.name)));
            }
            if v.levels.len() < 2 {
                return Err(Error::Schema(format!(
                    "variable `{}` has {} level(s); at least 2 are required",
                    v.name,
                    v.levels.len()
                )));
            }
            let mut seen = HashSet::new();
            for l in &v.levels {
                if !seen.insert(l.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate level `{}` in variable `{}`",
                        l, v.name
                    )));
                }
            }
        }
        Ok(Schema { variables })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, i: usize) -> &Variable {
        &self.variables[i]
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn n_levels(&self, i: usize) -> usize {
        self.variables[i].levels.len()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.variables.iter().map(Variable::n_levels).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.variables.iter().map(|v| v.name.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// An immutable N×p matrix of level indices over a [`Schema`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    schema: Schema,
    cells: Vec<u32>,
    n_rows: usize,
}

impl Dataset {
    /// Builds a dataset from row-major level indices.
    pub fn new(schema: Schema, cells: Vec<u32>) -> Result<Self> {
        let p = schema.len();
        if cells.is_empty() || cells.len() % p != 0 {
            return Err(Error::invalid(format!(
                "{} cells cannot form a non-empty matrix with {} columns",
                cells.len(),
                p
            )));
        }
        let n_rows = cells.len() / p;
        for (k, &c) in cells.iter().enumerate() {
            let col = k % p;
            if c as usize >= schema.n_levels(col) {
                return Err(Error::invalid(format!(
                    "row {} column `{}`: level index {} out of range",
                    k / p,
                    schema.variable(col).name,
                    c
                )));
            }
        }
        Ok(Dataset {
            schema,
            cells,
            n_rows,
        })
    }

    pub fn from_rows(schema: Schema, rows: &[Vec<usize>]) -> Result<Self> {
        let p = schema.len();
        let mut cells = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::invalid(format!("row {i} has {} cells, expected {p}", r.len())));
            }
            cells.extend(r.iter().map(|&c| c as u32));
        }
        Dataset::new(schema, cells)
    }

    /// Encodes string records, inferring levels as the sorted distinct labels per column.
    pub fn from_records(names: Vec<String>, records: &[Vec<String>]) -> Result<Self> {
        let p = names.len();
        if records.is_empty() {
            return Err(Error::invalid("dataset has no rows"));
        }
        let mut distinct: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); p];
        for (i, r) in records.iter().enumerate() {
            if r.len() != p {
                return Err(Error::invalid(format!("row {i} has {} cells, expected {p}", r.len())));
            }
            for (j, cell) in r.iter().enumerate() {
                if cell.trim().is_empty() {
                    return Err(Error::EmptyCell {
                        row: i,
                        column: names[j].clone(),
                    });
                }
                distinct[j].insert(cell.as_str());
            }
        }
        for (j, levels) in distinct.iter().enumerate() {
            if levels.len() < 2 {
                return Err(Error::Schema(format!(
                    "column `{}` has a single distinct value",
                    names[j]
                )));
            }
        }
        let variables: Vec<Variable> = names
            .iter()
            .zip(&distinct)
            .map(|(n, lv)| Variable::new(n.clone(), lv.iter().copied()))
            .collect();
        let schema = Schema::new(variables)?;
        let mut cells = Vec::with_capacity(records.len() * p);
        for r in records {
            for (j, cell) in r.iter().enumerate() {
                // levels are sorted, so binary search gives the index
                let idx = schema.variables[j]
                    .levels
                    .binary_search_by(|l| l.as_str().cmp(cell.as_str()))
                    .expect("level collected above");
                cells.push(idx as u32);
            }
        }
        Dataset::new(schema, cells)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_vars(&self) -> usize {
        self.schema.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        let p = self.schema.len();
        &self.cells[i * p..(i + 1) * p]
    }

    #[inline]
    pub fn get(&self, row: usize, var: usize) -> usize {
        self.cells[row * self.schema.len() + var] as usize
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.cells.chunks_exact(self.schema.len())
    }

    /// Decodes one row back to its level labels.
    pub fn decode_row(&self, i: usize) -> Vec<&str> {
        self.row(i)
            .iter()
            .enumerate()
            .map(|(j, &c)| self.schema.variables[j].levels[c as usize].as_str())
            .collect()
    }

    /// Rows at the given indices, in that order, over the same schema.
    pub fn subset_rows(&self, indices: &[usize]) -> Result<Self> {
        let p = self.schema.len();
        let mut cells = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            if i >= self.n_rows {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            cells.extend_from_slice(self.row(i));
        }
        Dataset::new(self.schema.clone(), cells)
    }

    /// Projection onto a subset of variables (in the given order).
    pub fn select_vars(&self, vars: &[usize]) -> Result<Self> {
        let mut variables = Vec::with_capacity(vars.len());
        for &v in vars {
            if v >= self.n_vars() {
                return Err(Error::invalid(format!("variable index {v} out of range")));
            }
            variables.push(self.schema.variables[v].clone());
        }
        let schema = Schema::new(variables)?;
        let mut cells = Vec::with_capacity(self.n_rows * vars.len());
        for r in self.rows() {
            cells.extend(vars.iter().map(|&v| r[v]));
        }
        Dataset::new(schema, cells)
    }

    pub fn write_csv<W: Write>(&self, w: W, header: bool) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().from_writer(w);
        if header {
            wtr.write_record(self.schema.names())?;
        }
        for i in 0..self.n_rows {
            wtr.write_record(self.decode_row(i))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Reads a comma-separated file. Without a header the columns are named `V1..Vp`.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset> {
    let f = std::fs::File::open(path.as_ref())?;
    read_csv(f, has_header)
}

pub fn read_csv<R: Read>(reader: R, has_header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut names: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse {
                line,
                message: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        if has_header && names.is_none() {
            names = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let w = width.ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let names = names.unwrap_or_else(|| (1..=w).map(|i| format!("V{i}")).collect());
    if records.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Dataset::from_records(names, &records)
}

/// Uniform resampling with replacement, `N` rows drawn from `rng`.
pub fn bootstrap_with_rng<R: Rng>(d: &Dataset, rng: &mut R) -> Dataset {
    let n = d.n_rows();
    let p = d.n_vars();
    let mut cells = Vec::with_capacity(n * p);
    for _ in 0..n {
        let i = rng.gen_range(0..n);
        cells.extend_from_slice(d.row(i));
    }
    Dataset {
        schema: d.schema.clone(),
        cells,
        n_rows: n,
    }
}

pub fn bootstrap_replicate(d: &Dataset, seed: u64) -> Dataset {
    bootstrap_with_rng(d, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `M` bootstrap replicates derived from one master seed.
///
/// Replicate `i` draws from stream `i` of the master ChaCha generator, so each
/// replicate can be produced independently of the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplePlan {
    replicates: usize,
    seed: u64,
}

impl ResamplePlan {
    pub fn new(replicates: usize, seed: u64) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::invalid("number of bootstrap replicates must be at least 1"));
        }
        Ok(ResamplePlan { replicates, seed })
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        rng
    }

    pub fn replicate(&self, d: &Dataset, i: usize) -> Dataset {
        bootstrap_with_rng(d, &mut self.rng(i))
    }
}

#[derive(Debug, Clone)]
pub struct Fold {
    pub train: Dataset,
    pub test: Dataset,
    /// Row indices (into the source dataset) held out in this fold, ascending.
    pub test_indices: Vec<usize>,
}

/// Shuffled k-fold partition; fold sizes differ by at most one.
pub fn kfold_split(d: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = d.n_rows();
    if k < 2 || k > n {
        return Err(Error::invalid(format!(
            "k-fold split needs 2 <= k <= N, got k={k}, N={n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test_indices = idx[start..start + size].to_vec();
        test_indices.sort_unstable();
        let mut in_test = vec![false; n];
        for &i in &test_indices {
            in_test[i] = true;
        }
        let train_indices: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        folds.push(Fold {
            train: d.subset_rows(&train_indices)?,
            test: d.subset_rows(&test_indices)?,
            test_indices,
        });
        start += size;
    }
    Ok(folds)
}

/// Median split of a numeric column: values `<= median` map to `low`, the rest to `high`.
pub fn dichotomize(column: &[f64], labels: (&str, &str)) -> Result<Vec<String>> {
    if column.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("cannot dichotomize a column containing NaN"));
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (first, last) = match (sorted.first(), sorted.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::invalid("cannot dichotomize an empty column")),
    };
    if first == last {
        return Err(Error::invalid("cannot dichotomize a constant column"));
    }
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    if !column.iter().any(|&x| x > median) {
        return Err(Error::invalid(format!(
            "median split at {median} leaves the high level empty"
        )));
    }
    Ok(column
        .iter()
        .map(|&x| if x <= median { labels.0 } else { labels.1 }.to_string())
        .collect())
}
