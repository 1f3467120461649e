//! k-fold cross-validation of bootstrap consensus models.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{averaged_tree, bootstrap_stagings, Linkage, DEFAULT_CUT};
use crate::dataset::{kfold_split, Dataset, ResamplePlan};
use crate::error::{Error, Result};
use crate::learning::{order_search, LearnConfig, OrderSearchConfig};
use crate::staged_tree::{FitConfig, StagedTree, VariableOrder};

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub replicates: usize,
    pub cut: f64,
    pub linkage: Linkage,
    pub seed: u64,
    pub algorithms: Vec<LearnConfig>,
    /// Smoothing of the refit used for held-out log-likelihood.
    pub predictive_smoothing: f64,
    /// Fixed order; when absent the order is searched with `order_search`.
    pub order: Option<VariableOrder>,
    pub order_search: OrderSearchConfig,
    /// Search the order on each training fold instead of once on the full data.
    pub reorder_per_fold: bool,
}

impl CvConfig {
    pub fn new(folds: usize, replicates: usize, seed: u64, algorithms: Vec<LearnConfig>) -> Self {
        CvConfig {
            folds,
            replicates,
            cut: DEFAULT_CUT,
            linkage: Linkage::Average,
            seed,
            algorithms,
            predictive_smoothing: 1.0,
            order: None,
            order_search: OrderSearchConfig::default(),
            reorder_per_fold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub fold: usize,
    pub algorithm: String,
    pub train_bic: f64,
    pub test_log_likelihood: f64,
    pub n_parameters: usize,
    pub wall_time_secs: f64,
    /// Lowest training BIC among the replicate stagings refitted on the fold.
    pub best_replicate_bic: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub metric: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl SummaryRow {
    pub fn quartiles(&self) -> Quartiles {
        Quartiles {
            min: self.min,
            q1: self.q1,
            median: self.median,
            q3: self.q3,
            max: self.max,
        }
    }
}

pub const METRICS: [&str; 4] = ["train_bic", "test_log_likelihood", "n_parameters", "wall_time_secs"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub records: Vec<CvRecord>,
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let f = h - lo as f64;
    if f == 0.0 || lo + 1 >= sorted.len() {
        sorted[lo]
    } else {
        (1.0 - f) * sorted[lo] + f * sorted[lo + 1]
    }
}

pub fn quartiles(values: &[f64]) -> Quartiles {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Quartiles {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    }
}

fn metric(r: &CvRecord, name: &str) -> f64 {
    match name {
        "train_bic" => r.train_bic,
        "test_log_likelihood" => r.test_log_likelihood,
        "n_parameters" => r.n_parameters as f64,
        "wall_time_secs" => r.wall_time_secs,
        _ => unreachable!("unknown metric {name}"),
    }
}

impl CvReport {
    pub fn algorithms(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.records {
            if !names.contains(&r.algorithm) {
                names.push(r.algorithm.clone());
            }
        }
        names
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for alg in self.algorithms() {
            let recs: Vec<&CvRecord> = self.records.iter().filter(|r| r.algorithm == alg).collect();
            for m in METRICS {
                let values: Vec<f64> = recs.iter().map(|r| metric(r, m)).collect();
                let q = quartiles(&values);
                rows.push(SummaryRow {
                    algorithm: alg.clone(),
                    metric: m.to_string(),
                    min: q.min,
                    q1: q.q1,
                    median: q.median,
                    q3: q.q3,
                    max: q.max,
                });
            }
        }
        rows
    }

    /// Equality ignoring wall times.
    pub fn same_results(&self, other: &CvReport) -> bool {
        let strip = |r: &CvReport| {
            let mut r = r.clone();
            for rec in r.records.iter_mut() {
                rec.wall_time_secs = 0.0;
            }
            r
        };
        strip(self) == strip(other)
    }

    pub fn write_records<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for r in self.summary() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_records(path: impl AsRef<Path>) -> Result<CvReport> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<CvRecord>, _>>()?;
        let folds = records.iter().map(|r| r.fold + 1).max().unwrap_or(0);
        Ok(CvReport { folds, records })
    }

    pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?)
    }
}

/// Writes `records.csv` and `summary.csv` into `dir`.
pub fn report_export(report: &CvReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    report.write_records(std::fs::File::create(dir.join("records.csv"))?)?;
    report.write_summary(std::fs::File::create(dir.join("summary.csv"))?)?;
    Ok(())
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold as u64 + 1)
}

/// Consensus model on one training set, plus the best replicate BIC.
pub fn fold_model(
    train: &Dataset,
    order: &VariableOrder,
    cfg: &LearnConfig,
    plan: &ResamplePlan,
    cut: f64,
    linkage: Linkage,
) -> Result<(StagedTree, f64)> {
    let ens = bootstrap_stagings(train, order, plan, cfg)?;
    let tree = averaged_tree(train, order, ens.consensus_stagings(cut, linkage)?, 0.0)?;
    let best = ens
        .replicates
        .iter()
        .map(|st| averaged_tree(train, order, st.clone(), 0.0)?.bic(train))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok((tree, best))
}

pub fn run_cv(d: &Dataset, cfg: &CvConfig) -> Result<CvReport> {
    if cfg.algorithms.is_empty() {
        return Err(Error::invalid("at least one algorithm is required"));
    }
    let plan_check = ResamplePlan::new(cfg.replicates, cfg.seed)?;
    let folds = kfold_split(d, cfg.folds, cfg.seed)?;
    let global_orders: Vec<Option<VariableOrder>> = if cfg.reorder_per_fold || cfg.order.is_some() {
        vec![cfg.order.clone(); cfg.algorithms.len()]
    } else {
        cfg.algorithms
            .iter()
            .map(|a| Ok(Some(order_search(d, a, &cfg.order_search)?.order)))
            .collect::<Result<Vec<_>>>()?
    };
    let cells: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|f| (0..cfg.algorithms.len()).map(move |a| (f, a)))
        .collect();
    let records = cells
        .into_par_iter()
        .map(|(f, a)| {
            let start = Instant::now();
            let fold = &folds[f];
            let alg = &cfg.algorithms[a];
            let order = match (&cfg.order, cfg.reorder_per_fold) {
                (Some(o), _) => o.clone(),
                (None, true) => order_search(&fold.train, alg, &cfg.order_search)?.order,
                (None, false) => global_orders[a].clone().expect("order searched on full data"),
            };
            let plan = ResamplePlan::new(plan_check.replicates(), fold_seed(cfg.seed, f))?;
            let (tree, best_replicate_bic) = fold_model(&fold.train, &order, alg, &plan, cfg.cut, cfg.linkage)?;
            let train_bic = tree.bic(&fold.train)?;
            let predictive = tree.fit(&fold.train, FitConfig::new(cfg.predictive_smoothing)?)?;
            let test_log_likelihood = predictive.log_likelihood(&fold.test)?;
            Ok(CvRecord {
                fold: f,
                algorithm: alg.algorithm.to_string(),
                train_bic,
                test_log_likelihood,
                n_parameters: tree.n_parameters(),
                wall_time_secs: start.elapsed().as_secs_f64(),
                best_replicate_bic,
                n_train: fold.train.n_rows(),
                n_test: fold.test.n_rows(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport {
        folds: folds.len(),
        records,
    })
}
