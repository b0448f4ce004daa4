//! Corpus-level BLEU over token ids with clipped n-gram counts up to 4-grams.

use std::collections::HashMap;
use std::ops::AddAssign;

use serde::Serialize;

use crate::corpus::TokenId;
use crate::error::{Error, Result};

pub const BLEU_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BleuScore {
    /// In `[0, 1]`.
    pub value: f64,
    pub precisions: [f64; BLEU_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Sufficient statistics of BLEU; sums over sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; BLEU_ORDER],
    pub totals: [usize; BLEU_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn sentence(hyp: &[TokenId], reference: &[TokenId]) -> Self {
        let mut stats = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=BLEU_ORDER {
            if hyp.len() < n {
                break;
            }
            let mut ref_counts: HashMap<&[TokenId], usize> = HashMap::new();
            for g in reference.windows(n) {
                *ref_counts.entry(g).or_default() += 1;
            }
            let mut hyp_counts: HashMap<&[TokenId], usize> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
            stats.totals[n - 1] = hyp.len() + 1 - n;
        }
        stats
    }

    fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    fn raw_precisions(&self) -> [f64; BLEU_ORDER] {
        let mut p = [0.0; BLEU_ORDER];
        for ((p, &m), &t) in p.iter_mut().zip(&self.matches).zip(&self.totals) {
            if t > 0 {
                *p = m as f64 / t as f64;
            }
        }
        p
    }

    /// Standard BLEU: zero as soon as any order has no match.
    pub fn score(&self) -> BleuScore {
        let precisions = self.raw_precisions();
        let bp = self.brevity_penalty();
        let value = if precisions.contains(&0.0) {
            0.0
        } else {
            bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / BLEU_ORDER as f64).exp()
        };
        BleuScore {
            value,
            precisions,
            brevity_penalty: bp,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }

    /// BLEU with add-one smoothing on the precisions of orders 2..4, used
    /// for small subsets. Unigram precision is left unsmoothed.
    pub fn smoothed_score(&self) -> BleuScore {
        let mut precisions = self.raw_precisions();
        for ((p, &m), &t) in precisions
            .iter_mut()
            .zip(&self.matches)
            .zip(&self.totals)
            .skip(1)
        {
            *p = (m as f64 + 1.0) / (t as f64 + 1.0);
        }
        let bp = self.brevity_penalty();
        let value = if precisions[0] == 0.0 {
            0.0
        } else {
            bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / BLEU_ORDER as f64).exp()
        };
        BleuScore {
            value,
            precisions,
            brevity_penalty: bp,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, other: Self) {
        for n in 0..BLEU_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

impl<'a> std::iter::Sum<&'a BleuStats> for BleuStats {
    fn sum<I: Iterator<Item = &'a BleuStats>>(iter: I) -> Self {
        let mut total = BleuStats::default();
        for s in iter {
            total += *s;
        }
        total
    }
}

pub fn corpus_stats<C, R>(candidates: &[C], references: &[R]) -> Result<BleuStats>
where
    C: AsRef<[TokenId]>,
    R: AsRef<[TokenId]>,
{
    if candidates.is_empty() {
        return Err(Error::arg("BLEU over an empty corpus"));
    }
    if candidates.len() != references.len() {
        return Err(Error::arg(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        stats += BleuStats::sentence(c.as_ref(), r.as_ref());
    }
    Ok(stats)
}

/// Unsmoothed corpus BLEU.
pub fn bleu<C, R>(candidates: &[C], references: &[R]) -> Result<BleuScore>
where
    C: AsRef<[TokenId]>,
    R: AsRef<[TokenId]>,
{
    Ok(corpus_stats(candidates, references)?.score())
}

/// Corpus BLEU with add-one smoothing for orders 2..4.
pub fn smoothed_bleu<C, R>(candidates: &[C], references: &[R]) -> Result<BleuScore>
where
    C: AsRef<[TokenId]>,
    R: AsRef<[TokenId]>,
{
    Ok(corpus_stats(candidates, references)?.smoothed_score())
}
