//! Mixed-radix indexing of variable configurations and per-context count tables.
//!
//! A context over variables `(v_0, …, v_{k-1})` is indexed with `v_0` as the most
//! significant digit, which is the left-to-right vertex order of a probability tree.

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Upper bound on the number of contexts materialized for one depth.
pub const MAX_CONTEXTS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSpace {
    vars: Vec<usize>,
    radices: Vec<usize>,
    size: usize,
}

impl ContextSpace {
    pub fn new(vars: &[usize], level_counts: &[usize]) -> Result<Self> {
        let radices: Vec<usize> = vars.iter().map(|&v| level_counts[v]).collect();
        let mut size: u128 = 1;
        for &r in &radices {
            size *= r as u128;
            if size > MAX_CONTEXTS as u128 {
                return Err(Error::TooLarge {
                    what: format!("context space over {} variables", vars.len()),
                    size: radices.iter().map(|&r| r as u128).product(),
                    limit: MAX_CONTEXTS as u128,
                });
            }
        }
        Ok(ContextSpace {
            vars: vars.to_vec(),
            radices,
            size: size as usize,
        })
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Index of the context read off a full row (indexed by variable).
    #[inline]
    pub fn index_of_row(&self, row: &[u32]) -> usize {
        let mut idx = 0;
        for (&v, &r) in self.vars.iter().zip(&self.radices) {
            idx = idx * r + row[v] as usize;
        }
        idx
    }

    /// Index from digits listed in this space's variable order.
    pub fn encode(&self, digits: &[usize]) -> usize {
        let mut idx = 0;
        for (&d, &r) in digits.iter().zip(&self.radices) {
            idx = idx * r + d;
        }
        idx
    }

    pub fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut digits = vec![0; self.radices.len()];
        for k in (0..self.radices.len()).rev() {
            digits[k] = idx % self.radices[k];
            idx /= self.radices[k];
        }
        digits
    }

    /// For each context of `self`, the index of the same configuration in `other`,
    /// which must range over a permutation of the same variables.
    pub fn reindex_into(&self, other: &ContextSpace) -> Vec<usize> {
        debug_assert_eq!(self.vars.len(), other.vars.len());
        let pos: Vec<usize> = other
            .vars
            .iter()
            .map(|v| self.vars.iter().position(|w| w == v).expect("same variable set"))
            .collect();
        (0..self.size)
            .map(|c| {
                let d = self.decode(c);
                let od: Vec<usize> = pos.iter().map(|&p| d[p]).collect();
                other.encode(&od)
            })
            .collect()
    }
}

/// Counts `n(context, level)` of one target variable over a context space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextCounts {
    n_levels: usize,
    counts: Vec<u32>,
}

impl ContextCounts {
    pub fn tabulate(d: &Dataset, space: &ContextSpace, target: usize) -> Self {
        let n_levels = d.schema().n_levels(target);
        let mut counts = vec![0u32; space.len() * n_levels];
        for row in d.rows() {
            let c = space.index_of_row(row);
            counts[c * n_levels + row[target] as usize] += 1;
        }
        ContextCounts { n_levels, counts }
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn n_contexts(&self) -> usize {
        self.counts.len() / self.n_levels
    }

    #[inline]
    pub fn context(&self, c: usize) -> &[u32] {
        &self.counts[c * self.n_levels..(c + 1) * self.n_levels]
    }

    /// Per-stage pooled counts for a partition given as context → stage id.
    pub fn pool(&self, stages: &[usize], n_stages: usize) -> Vec<Vec<u64>> {
        let mut pooled = vec![vec![0u64; self.n_levels]; n_stages];
        for (c, &s) in stages.iter().enumerate() {
            for (acc, &n) in pooled[s].iter_mut().zip(self.context(c)) {
                *acc += n as u64;
            }
        }
        pooled
    }
}

/// Smoothed stage distribution `(n_v + λ) / (n + λ·L)`; uniform when the denominator is zero.
pub fn stage_probabilities(counts: &[u64], smoothing: f64) -> Vec<f64> {
    let l = counts.len() as f64;
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + smoothing * l;
    if denom == 0.0 {
        return vec![1.0 / l; counts.len()];
    }
    counts.iter().map(|&n| (n as f64 + smoothing) / denom).collect()
}

/// `Σ_v n_v ln p_v`, skipping empty cells; `-inf` if a positive count meets a zero probability.
pub fn weighted_log_lik(counts: &[u64], probs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&n, &p) in counts.iter().zip(probs) {
        if n > 0 {
            acc += n as f64 * p.ln();
        }
    }
    acc
}

/// Depth score `-2·ℓ + d·ln N` with the stage terms summed in sorted order, so the
/// result does not depend on how the contexts (and hence the stages) were enumerated.
pub fn depth_bic(mut stage_terms: Vec<f64>, n_params: usize, ln_n: f64) -> f64 {
    -2.0 * sorted_sum(&mut stage_terms) + n_params as f64 * ln_n
}

pub fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let s = ContextSpace::new(&[0, 1, 2], &[4, 2, 3]).unwrap();
        assert_eq!(s.len(), 24);
        for c in 0..s.len() {
            assert_eq!(s.encode(&s.decode(c)), c);
        }
        assert_eq!(s.decode(5), vec![0, 1, 2]);
    }

    #[test]
    fn reindex_between_orders() {
        let a = ContextSpace::new(&[0, 1], &[2, 3]).unwrap();
        let b = ContextSpace::new(&[1, 0], &[2, 3]).unwrap();
        let map = a.reindex_into(&b);
        // a: (x0, x1) -> x0*3 + x1 ; b: (x1, x0) -> x1*2 + x0
        assert_eq!(map, vec![0, 2, 4, 1, 3, 5]);
    }

    #[test]
    fn guard_trips() {
        assert!(ContextSpace::new(&[0, 1, 2, 3], &[1000, 1000, 1000, 1000]).is_err());
    }

    #[test]
    fn smoothing_formula() {
        assert_eq!(stage_probabilities(&[3, 1], 0.0), vec![0.75, 0.25]);
        let p = stage_probabilities(&[3, 1], 1.0);
        assert!((p[0] - 4.0 / 6.0).abs() < 1e-15 && (p[1] - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(stage_probabilities(&[0, 0, 0], 0.0), vec![1.0 / 3.0; 3]);
        assert_eq!(weighted_log_lik(&[1, 0], &[0.0, 1.0]), f64::NEG_INFINITY);
        assert_eq!(weighted_log_lik(&[0, 2], &[0.0, 1.0]), 0.0);
    }
}
