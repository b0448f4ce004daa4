//! Position-wise output distributions of a non-autoregressive model and
//! their expected bag-of-ngrams.
//!
//! Because every position is an independent categorical distribution, the
//! expected number of occurrences of an n-gram `g` is a sum over windows:
//!
//! ```text
//! E[count(g)] = sum_{t=0}^{T-n} prod_{i=0}^{n-1} p(y_{t+i} = g_i)
//! ```
//!
//! [`oracle_expected_count`] computes the same value by enumerating every
//! output sequence and is only meant for verification on tiny tables.

use std::collections::HashMap;

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ngram::{Ngram, NgramBag};

/// Largest number of sequences the enumeration oracle will visit.
pub const ORACLE_LIMIT: u128 = 10_000_000;

/// Tolerance on each row's sum.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// `T x V` matrix whose row `t` is the distribution of the token at
/// position `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    probs: Matrix,
}

impl ProbTable {
    /// Validates that every row is a distribution. Rows are never
    /// renormalized.
    pub fn new(probs: Matrix) -> Result<Self> {
        if probs.rows() == 0 {
            return Err(Error::InvalidTable("table has no positions".into()));
        }
        if probs.cols() == 0 {
            return Err(Error::InvalidTable("table has an empty vocabulary".into()));
        }
        for t in 0..probs.rows() {
            let row = probs.row(t);
            if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(Error::InvalidTable(format!(
                    "row {t} has invalid entry {bad}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidTable(format!("row {t} sums to {sum}")));
            }
        }
        Ok(ProbTable { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTable("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(Matrix::from_vec(rows.len(), cols, data))
    }

    pub fn uniform(len: usize, vocab: usize) -> Result<Self> {
        let mut m = Matrix::zeros(len, vocab);
        m.fill(1.0 / vocab as f64);
        Self::new(m)
    }

    /// Degenerate table that puts all mass on `sentence`.
    pub fn one_hot(sentence: &[TokenId], vocab: usize) -> Result<Self> {
        let mut m = Matrix::zeros(sentence.len(), vocab);
        for (t, &w) in sentence.iter().enumerate() {
            if w as usize >= vocab {
                return Err(Error::arg(format!(
                    "token {w} outside vocabulary of {vocab}"
                )));
            }
            m[(t, w as usize)] = 1.0;
        }
        Self::new(m)
    }

    /// Copy with one entry shifted by `delta` and no validation. Used by
    /// finite-difference checks, which treat every entry as a free variable.
    pub fn perturbed(&self, t: usize, w: usize, delta: f64) -> ProbTable {
        let mut probs = self.probs.clone();
        probs[(t, w)] += delta;
        ProbTable { probs }
    }

    /// Target length `T`.
    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn vocab(&self) -> usize {
        self.probs.cols()
    }

    pub fn prob(&self, t: usize, w: TokenId) -> f64 {
        self.probs[(t, w as usize)]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.probs
    }

    /// Number of length-`n` windows, `max(0, T - n + 1)`.
    pub fn windows(&self, n: usize) -> usize {
        (self.len() + 1).saturating_sub(n)
    }

    /// Most likely token per position, lowest id on ties.
    pub fn argmax(&self) -> Vec<TokenId> {
        (0..self.len())
            .map(|t| argmax_excluding(self.row(t), &[]))
            .collect()
    }

    fn window_product(&self, start: usize, g: &Ngram) -> f64 {
        let mut prod = 1.0;
        for (i, &w) in g.ids().iter().enumerate() {
            prod *= self.prob(start + i, w);
        }
        prod
    }
}

/// Index of the largest entry, skipping ids in `excluded`; ties go to the
/// lowest index.
pub(crate) fn argmax_excluding(row: &[f64], excluded: &[TokenId]) -> TokenId {
    let mut best: Option<(usize, f64)> = None;
    for (w, &p) in row.iter().enumerate() {
        if excluded.contains(&(w as TokenId)) {
            continue;
        }
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((w, p));
        }
    }
    best.map_or(0, |(w, _)| w as TokenId)
}

/// Expected count of `g` under the table. Zero when `T < n`.
pub fn expected_ngram_count(table: &ProbTable, g: &Ngram) -> f64 {
    let mut total = 0.0;
    for t in 0..table.windows(g.order()) {
        total += table.window_product(t, g);
    }
    total
}

/// Expected counts for a list of n-grams of one order, in input order.
///
/// Windows are visited once; within a window only n-grams whose first
/// token has non-zero probability there are expanded. Per n-gram the
/// accumulation order matches [`expected_ngram_count`], so results are
/// bitwise equal to it.
pub fn expected_counts(table: &ProbTable, grams: &[Ngram]) -> Vec<f64> {
    let mut totals = vec![0.0; grams.len()];
    let Some(order) = grams.first().map(Ngram::order) else {
        return totals;
    };
    debug_assert!(grams.iter().all(|g| g.order() == order));

    let mut by_first: HashMap<TokenId, Vec<usize>> = HashMap::new();
    for (k, g) in grams.iter().enumerate() {
        by_first.entry(g.first()).or_default().push(k);
    }
    let mut firsts: Vec<(TokenId, Vec<usize>)> = by_first.into_iter().collect();
    firsts.sort_unstable_by_key(|(w, _)| *w);

    for t in 0..table.windows(order) {
        for (first, members) in &firsts {
            if table.prob(t, *first) == 0.0 {
                continue;
            }
            for &k in members {
                totals[k] += table.window_product(t, &grams[k]);
            }
        }
    }
    totals
}

/// Expected bag restricted to the n-grams present in `support`.
pub fn expected_bag(table: &ProbTable, support: &NgramBag) -> NgramBag {
    let grams: Vec<Ngram> = support.iter().map(|(g, _)| *g).collect();
    let counts = expected_counts(table, &grams);
    let mut bag = NgramBag::new(support.order()).expect("support has a valid order");
    for (g, c) in grams.into_iter().zip(counts) {
        bag.add(g, c);
    }
    bag
}

/// Brute-force expectation of the count of `g`, enumerating all `V^T`
/// sequences and weighting each by its probability.
pub fn oracle_expected_count(table: &ProbTable, g: &Ngram) -> Result<f64> {
    let (len, vocab) = (table.len(), table.vocab());
    let size = (vocab as u128)
        .checked_pow(len as u32)
        .filter(|&s| s <= ORACLE_LIMIT)
        .ok_or(Error::SearchSpaceTooLarge {
            size: (vocab as u128).saturating_pow(len as u32),
            limit: ORACLE_LIMIT,
        })?;

    let n = g.order();
    let target = g.ids();
    let mut seq = vec![0 as TokenId; len];
    let mut total = 0.0;
    for _ in 0..size {
        let prob: f64 = seq
            .iter()
            .enumerate()
            .map(|(t, &w)| table.prob(t, w))
            .product();
        if prob > 0.0 && len >= n {
            let hits = seq.windows(n).filter(|w| *w == target).count();
            total += prob * hits as f64;
        }
        // odometer increment, last position fastest
        for digit in seq.iter_mut().rev() {
            *digit += 1;
            if (*digit as usize) < vocab {
                break;
            }
            *digit = 0;
        }
    }
    Ok(total)
}

/// Gradient of [`expected_ngram_count`] with respect to every table entry.
pub fn expected_count_gradient(table: &ProbTable, g: &Ngram) -> Matrix {
    let mut grad = Matrix::zeros(table.len(), table.vocab());
    accumulate_count_gradient(table, g, 1.0, &mut grad);
    grad
}

/// `grad += weight * d E[count(g)] / d p`.
pub(crate) fn accumulate_count_gradient(
    table: &ProbTable,
    g: &Ngram,
    weight: f64,
    grad: &mut Matrix,
) {
    let ids = g.ids();
    for t in 0..table.windows(g.order()) {
        for (i, &w) in ids.iter().enumerate() {
            let mut others = 1.0;
            for (k, &v) in ids.iter().enumerate() {
                if k != i {
                    others *= table.prob(t + k, v);
                }
            }
            grad[(t + i, w as usize)] += weight * others;
        }
    }
}
