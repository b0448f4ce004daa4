//! Corpus-level analyses of a trained checkpoint: loss/BLEU correlation
//! over random subsets, removed-token accounting and BLEU by length.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{ParallelPair, TokenSequence};
use crate::error::{Error, Result};
use crate::eval::bleu::{BleuScore, BleuStats};
use crate::eval::pearson::pearson;
use crate::loss::{bon_l1, cross_entropy, LossSpec};
use crate::model::{decode, postprocess, Checkpoint};

/// Losses compared by default: normalized cross-entropy and BoN for n = 1..4.
pub const DEFAULT_LOSSES: [LossSpec; 5] = [
    LossSpec::NormalizedCe,
    LossSpec::Bon(1),
    LossSpec::Bon(2),
    LossSpec::Bon(3),
    LossSpec::Bon(4),
];

/// Decoder output for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub raw: TokenSequence,
    /// `raw` after collapsing adjacent repeats.
    pub cleaned: TokenSequence,
    pub removed: usize,
}

/// Decodes and postprocesses every source, in corpus order.
pub fn decode_corpus(ckpt: &Checkpoint, corpus: &[ParallelPair]) -> Result<Vec<Decoded>> {
    corpus
        .par_iter()
        .map(|pair| {
            let raw = decode(&ckpt.model, &ckpt.length, &pair.source)?;
            let (cleaned, removed) = postprocess(&raw);
            Ok(Decoded {
                raw,
                cleaned,
                removed,
            })
        })
        .collect()
}

/// How per-sentence losses are combined into one subset loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// `sum(raw loss) / sum(normalizer)`: cross-entropy over reference
    /// tokens, BoN-L1 over `2(T-n+1)`. Long sentences weigh more, the same
    /// way corpus BLEU pools n-gram counts.
    #[default]
    TokenWeighted,
    /// Plain mean of the per-sentence normalized losses.
    Mean,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::TokenWeighted => "token-weighted",
            Pooling::Mean => "mean",
        })
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token-weighted" | "tokens" => Ok(Pooling::TokenWeighted),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::Config(format!("unknown pooling '{other}'"))),
        }
    }
}

/// `(numerator, denominator)` contribution of one sentence.
fn pooled_terms(
    ckpt: &Checkpoint,
    pair: &ParallelPair,
    spec: &LossSpec,
    pooling: Pooling,
) -> Result<(f64, f64)> {
    let t = pair.target.len();
    let table = ckpt.model.forward(&pair.source, t)?;
    if pooling == Pooling::Mean {
        return Ok((spec.evaluate(&table, &pair.target)?.value, 1.0));
    }
    Ok(match *spec {
        LossSpec::NormalizedCe => (cross_entropy(&table, &pair.target)?.value, t as f64),
        LossSpec::Bon(n) => {
            let l1 = bon_l1(&table, &pair.target, n)?;
            if l1.degenerate {
                (0.0, 0.0)
            } else {
                (l1.value, 2.0 * (t + 1 - n) as f64)
            }
        }
        _ => (spec.evaluate(&table, &pair.target)?.value, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetPoint {
    pub subset: usize,
    pub loss: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub loss: LossSpec,
    pub subsets: usize,
    pub subset_size: usize,
    pub pooling: Pooling,
    /// `None` when either series has zero variance.
    pub r: Option<f64>,
    pub points: Vec<SubsetPoint>,
}

/// Splits a seeded shuffle of `corpus` into `subsets` disjoint subsets of
/// `subset_size` pairs and correlates each loss with subset BLEU.
///
/// BLEU is computed on postprocessed output with add-one smoothing for
/// orders 2..4. Losses are evaluated at the reference length and pooled
/// token-weighted.
pub fn correlation_study(
    ckpt: &Checkpoint,
    corpus: &[ParallelPair],
    losses: &[LossSpec],
    subsets: usize,
    subset_size: usize,
    seed: u64,
) -> Result<Vec<CorrelationReport>> {
    correlation_study_with(
        ckpt,
        corpus,
        losses,
        subsets,
        subset_size,
        seed,
        Pooling::default(),
    )
}

pub fn correlation_study_with(
    ckpt: &Checkpoint,
    corpus: &[ParallelPair],
    losses: &[LossSpec],
    subsets: usize,
    subset_size: usize,
    seed: u64,
    pooling: Pooling,
) -> Result<Vec<CorrelationReport>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if subsets < 2 || subset_size == 0 {
        return Err(Error::arg("need at least two non-empty subsets"));
    }
    if losses.is_empty() {
        return Err(Error::arg("no losses to correlate"));
    }
    let needed = subsets
        .checked_mul(subset_size)
        .filter(|&n| n <= corpus.len())
        .ok_or_else(|| {
            Error::arg(format!(
                "{subsets} subsets of {subset_size} exceed the {} available pairs",
                corpus.len()
            ))
        })?;

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(needed);

    let per_sentence: Vec<(BleuStats, Vec<(f64, f64)>)> = order
        .par_iter()
        .map(|&i| {
            let pair = &corpus[i];
            let raw = decode(&ckpt.model, &ckpt.length, &pair.source)?;
            let (cleaned, _) = postprocess(&raw);
            let stats = BleuStats::sentence(cleaned.ids(), pair.target.ids());
            let terms = losses
                .iter()
                .map(|spec| pooled_terms(ckpt, pair, spec, pooling))
                .collect::<Result<Vec<_>>>()?;
            Ok((stats, terms))
        })
        .collect::<Result<_>>()?;

    let chunks: Vec<_> = per_sentence.chunks(subset_size).collect();
    let bleus: Vec<f64> = chunks
        .iter()
        .map(|c| {
            c.iter()
                .map(|(s, _)| s)
                .sum::<BleuStats>()
                .smoothed_score()
                .value
        })
        .collect();

    let mut reports = Vec::with_capacity(losses.len());
    for (k, spec) in losses.iter().enumerate() {
        let mut points = Vec::with_capacity(subsets);
        for (subset, chunk) in chunks.iter().enumerate() {
            let (num, den) = chunk.iter().fold((0.0, 0.0), |(a, b), (_, terms)| {
                (a + terms[k].0, b + terms[k].1)
            });
            let loss = if den > 0.0 { num / den } else { 0.0 };
            points.push(SubsetPoint {
                subset,
                loss,
                bleu: bleus[subset],
            });
        }
        let xs: Vec<f64> = points.iter().map(|p| p.loss).collect();
        let r = match pearson(&xs, &bleus) {
            Ok(r) => Some(r),
            Err(Error::UndefinedCorrelation(which)) => {
                log::warn!("correlation for {spec} undefined: {which} has zero variance");
                None
            }
            Err(e) => return Err(e),
        };
        reports.push(CorrelationReport {
            loss: *spec,
            subsets,
            subset_size,
            pooling,
            r,
            points,
        });
    }
    Ok(reports)
}

/// Indices of the shorter and longer halves of `corpus` by source length.
/// Ties keep corpus order; with an odd count the long half gets the extra
/// pair.
pub fn split_indices(corpus: &[ParallelPair]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by_key(|&i| (corpus[i].source.len(), i));
    let long = order.split_off(corpus.len() / 2);
    (order, long)
}

pub fn split_short_long(corpus: &[ParallelPair]) -> (Vec<ParallelPair>, Vec<ParallelPair>) {
    let (short, long) = split_indices(corpus);
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| corpus[i].clone()).collect();
    (pick(short), pick(long))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalRow {
    /// `short`, `long` or `all`.
    pub bucket: &'static str,
    pub sentences: usize,
    pub ref_tokens: usize,
    /// Decoded tokens before postprocessing.
    pub hyp_tokens: usize,
    pub removed: usize,
    /// `removed` as a percentage of `ref_tokens`.
    pub removed_pct: f64,
    /// Unsmoothed corpus BLEU of the bucket after postprocessing.
    pub bleu: f64,
}

/// Tokens removed by postprocessing for the short half, the long half and
/// the whole corpus.
pub fn removed_token_report(ckpt: &Checkpoint, corpus: &[ParallelPair]) -> Result<Vec<RemovalRow>> {
    if corpus.len() < 2 {
        return Err(Error::arg("removed-token report needs at least two pairs"));
    }
    let decoded = decode_corpus(ckpt, corpus)?;
    let (short, long) = split_indices(corpus);
    let all: Vec<usize> = (0..corpus.len()).collect();
    [("short", short), ("long", long), ("all", all)]
        .into_iter()
        .map(|(bucket, ix)| {
            let ref_tokens: usize = ix.iter().map(|&i| corpus[i].target.len()).sum();
            let hyp_tokens: usize = ix.iter().map(|&i| decoded[i].raw.len()).sum();
            let removed: usize = ix.iter().map(|&i| decoded[i].removed).sum();
            let stats: BleuStats = ix
                .iter()
                .map(|&i| BleuStats::sentence(decoded[i].cleaned.ids(), corpus[i].target.ids()))
                .collect::<Vec<_>>()
                .iter()
                .sum();
            Ok(RemovalRow {
                bucket,
                sentences: ix.len(),
                ref_tokens,
                hyp_tokens,
                removed,
                removed_pct: 100.0 * removed as f64 / ref_tokens as f64,
                bleu: stats.score().value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthBucket {
    /// Smallest reference length in the bucket (inclusive).
    pub lower: usize,
    /// Largest reference length (inclusive); `None` for the open last bucket.
    pub upper: Option<usize>,
    pub count: usize,
    /// Unsmoothed corpus BLEU; `None` for an empty bucket.
    pub bleu: Option<f64>,
}

/// Corpus BLEU grouped by reference length. Edges `e1 < e2 < ...` give the
/// buckets `[1, e1]`, `[e1+1, e2]`, ... and a final open bucket.
pub fn length_bucket_bleu(
    ckpt: &Checkpoint,
    corpus: &[ParallelPair],
    edges: &[usize],
) -> Result<Vec<LengthBucket>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if edges.first() == Some(&0) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg(
            "bucket edges must be positive and strictly increasing",
        ));
    }
    let decoded = decode_corpus(ckpt, corpus)?;
    let mut out = Vec::with_capacity(edges.len() + 1);
    let mut lower = 1;
    for k in 0..=edges.len() {
        let upper = edges.get(k).copied();
        let members: Vec<usize> = (0..corpus.len())
            .filter(|&i| {
                let len = corpus[i].target.len();
                len >= lower && upper.is_none_or(|u| len <= u)
            })
            .collect();
        let bleu = if members.is_empty() {
            None
        } else {
            let stats: BleuStats = members
                .iter()
                .map(|&i| BleuStats::sentence(decoded[i].cleaned.ids(), corpus[i].target.ids()))
                .collect::<Vec<_>>()
                .iter()
                .sum();
            Some(stats.score().value)
        };
        out.push(LengthBucket {
            lower,
            upper,
            count: members.len(),
            bleu,
        });
        if let Some(u) = upper {
            lower = u + 1;
        }
    }
    Ok(out)
}

/// Unsmoothed corpus BLEU of the checkpoint's postprocessed output.
pub fn corpus_bleu(ckpt: &Checkpoint, corpus: &[ParallelPair]) -> Result<BleuScore> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let decoded = decode_corpus(ckpt, corpus)?;
    let stats: BleuStats = decoded
        .iter()
        .zip(corpus)
        .map(|(d, p)| BleuStats::sentence(d.cleaned.ids(), p.target.ids()))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(stats.score())
}
