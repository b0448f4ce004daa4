//! Vocabularies, whitespace-tokenized text files and synthetic parallel
//! tasks.
//!
//! Token ids 0 and 1 are always `<pad>` and `<unk>`. Synthetic tasks use a
//! closed vocabulary `w0 .. w{k-1}` mapped onto ids `2 .. k+1`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
/// Number of reserved ids at the start of every vocabulary.
pub const RESERVED: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary of at most `max_size` entries (reserved ids
    /// included) from tokenized lines. Tokens are ranked by frequency, ties
    /// broken by first occurrence.
    pub fn build<S: AsRef<str>>(lines: &[Vec<S>], max_size: usize) -> Result<Self> {
        if max_size < RESERVED {
            return Err(Error::arg(format!(
                "vocabulary size {max_size} cannot hold the reserved tokens"
            )));
        }
        // token -> (count, first occurrence)
        let mut stats: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut position = 0usize;
        for tok in lines.iter().flatten() {
            let tok = tok.as_ref();
            stats.entry(tok).or_insert((0, position)).0 += 1;
            position += 1;
        }
        if position == 0 {
            return Err(Error::EmptyCorpus);
        }
        stats.remove(PAD_TOKEN);
        stats.remove(UNK_TOKEN);

        let mut ranked: Vec<(&str, usize, usize)> =
            stats.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(max_size - RESERVED);

        Ok(Self::with_content(
            ranked.into_iter().map(|(t, _, _)| t.to_string()),
        ))
    }

    /// Vocabulary of reserved tokens followed by `content` in order.
    /// Duplicates and reserved names in `content` are skipped.
    pub fn with_content<I: IntoIterator<Item = String>>(content: I) -> Self {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        vocab.push(PAD_TOKEN.to_string());
        vocab.push(UNK_TOKEN.to_string());
        for tok in content {
            vocab.push(tok);
        }
        vocab
    }

    /// Closed vocabulary used by the synthetic tasks.
    pub fn synthetic(content_size: usize) -> Self {
        Self::with_content((0..content_size).map(|k| format!("w{k}")))
    }

    fn push(&mut self, tok: String) {
        if self.index.contains_key(&tok) {
            return;
        }
        self.index.insert(tok.clone(), self.tokens.len() as TokenId);
        self.tokens.push(tok);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps tokens to ids; out-of-vocabulary tokens become `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, line: &[S]) -> TokenSequence {
        TokenSequence(
            line.iter()
                .map(|t| self.id(t.as_ref()).unwrap_or(UNK_ID))
                .collect(),
        )
    }

    /// Inverse of [`encode`](Self::encode). Ids outside the vocabulary
    /// render as `<unk>`.
    pub fn decode(&self, seq: &TokenSequence) -> Vec<&str> {
        seq.iter()
            .map(|id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect()
    }

    pub fn decode_line(&self, seq: &TokenSequence) -> String {
        self.decode(seq).join(" ")
    }

    /// One token per line; the line number is the id.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for tok in &self.tokens {
            writeln!(out, "{tok}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            tokens.push(line?);
        }
        if tokens.len() < RESERVED || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::format(
                "vocabulary file",
                "first two lines must be <pad> and <unk>",
            ));
        }
        let vocab = Self::with_content(tokens.drain(RESERVED..));
        Ok(vocab)
    }
}

/// Integer view of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.0.iter().copied()
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }
}

impl AsRef<[TokenId]> for TokenSequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source: TokenSequence,
    pub target: TokenSequence,
}

impl ParallelPair {
    pub fn new(source: TokenSequence, target: TokenSequence) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::arg("parallel pair with an empty side"));
        }
        Ok(ParallelPair { source, target })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Copy,
    Reverse,
    DictSubstitution,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::DictSubstitution => "dict-substitution",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "dict" | "dict-substitution" => Ok(TaskKind::DictSubstitution),
            other => Err(Error::Config(format!("unknown task kind '{other}'"))),
        }
    }
}

/// Parameters of a synthetic parallel corpus.
///
/// `seed` drives sentence sampling. The substitution bijection of the
/// dict task is drawn from `mapping_seed` instead, so corpora generated
/// with different seeds (train and held-out) share one mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    /// Number of content tokens, not counting `<pad>` and `<unk>`.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub samples: usize,
    pub seed: u64,
    pub mapping_seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 1 {
            return Err(Error::Config("minimum length must be at least 1".into()));
        }
        if self.max_len < self.min_len {
            return Err(Error::Config(format!(
                "length range [{}, {}] is empty",
                self.min_len, self.max_len
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "synthetic vocabulary needs at least 4 content tokens, got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::synthetic(self.vocab_size)
    }

    /// Total vocabulary size including reserved ids.
    pub fn total_vocab(&self) -> usize {
        self.vocab_size + RESERVED
    }

    /// Seeded bijection over content ids, as a lookup table indexed by id.
    /// Reserved ids map to themselves.
    pub fn substitution_table(&self) -> Vec<TokenId> {
        let total = self.total_vocab();
        let mut images: Vec<TokenId> = (RESERVED as TokenId..total as TokenId).collect();
        images.shuffle(&mut ChaCha8Rng::seed_from_u64(self.mapping_seed));
        let mut table: Vec<TokenId> = (0..RESERVED as TokenId).collect();
        table.extend(images);
        table
    }
}

/// Generates a synthetic corpus. Sources never contain two equal adjacent
/// tokens, so any repeat in a decoded output is produced by the model.
pub fn generate_task(spec: &SyntheticTaskSpec) -> Result<Vec<ParallelPair>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lo = RESERVED as TokenId;
    let hi = spec.total_vocab() as TokenId;
    let table = match spec.kind {
        TaskKind::DictSubstitution => Some(spec.substitution_table()),
        _ => None,
    };

    let mut pairs = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut src: Vec<TokenId> = Vec::with_capacity(len);
        while src.len() < len {
            let tok = rng.gen_range(lo..hi);
            if src.last() != Some(&tok) {
                src.push(tok);
            }
        }
        let tgt = match spec.kind {
            TaskKind::Copy => src.clone(),
            TaskKind::Reverse => src.iter().rev().copied().collect(),
            TaskKind::DictSubstitution => {
                let table = table.as_ref().expect("dict task has a table");
                src.iter().map(|&t| table[t as usize]).collect()
            }
        };
        pairs.push(ParallelPair::new(src.into(), tgt.into())?);
    }
    Ok(pairs)
}

/// Applies token-level insertion/deletion noise to the target side.
///
/// Each target token is dropped with probability `rate / 2`, and followed by
/// a uniformly drawn content token with probability `rate / 2`. A target
/// that would become empty keeps its first token. Sources are untouched.
pub fn corrupt_targets(
    pairs: &[ParallelPair],
    rate: f64,
    vocab_size: usize,
    seed: u64,
) -> Result<Vec<ParallelPair>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("noise rate {rate} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = RESERVED as TokenId;
    let hi = (vocab_size + RESERVED) as TokenId;
    pairs
        .iter()
        .map(|pair| {
            let mut out = Vec::with_capacity(pair.target.len() + 2);
            for tok in pair.target.iter() {
                let u: f64 = rng.gen();
                if u < rate / 2.0 {
                    continue;
                }
                out.push(tok);
                if u >= 1.0 - rate / 2.0 {
                    out.push(rng.gen_range(lo..hi));
                }
            }
            if out.is_empty() {
                out.push(pair.target.ids()[0]);
            }
            ParallelPair::new(pair.source.clone(), out.into())
        })
        .collect()
}

/// Reads a whitespace-tokenized corpus, one sentence per line.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let file = fs::File::open(path)?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line?.split_whitespace().map(str::to_string).collect());
    }
    Ok(lines)
}

pub fn write_corpus<'a, I>(path: impl AsRef<Path>, vocab: &Vocabulary, seqs: I) -> Result<()>
where
    I: IntoIterator<Item = &'a TokenSequence>,
{
    let mut buf = Vec::new();
    for seq in seqs {
        writeln!(buf, "{}", vocab.decode_line(seq))?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Loads a parallel corpus from two line-aligned files.
pub fn read_parallel(
    source: impl AsRef<Path>,
    target: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<Vec<ParallelPair>> {
    let src = read_corpus(source)?;
    let tgt = read_corpus(target)?;
    if src.len() != tgt.len() {
        return Err(Error::format(
            "parallel corpus",
            format!("{} source lines vs {} target lines", src.len(), tgt.len()),
        ));
    }
    if src.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    src.iter()
        .zip(&tgt)
        .map(|(s, t)| ParallelPair::new(vocab.encode(s), vocab.encode(t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn spec(kind: TaskKind) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            kind,
            vocab_size: 10,
            min_len: 2,
            max_len: 9,
            samples: 50,
            seed: 3,
            mapping_seed: 0,
        }
    }

    #[test]
    fn build_orders_by_frequency() {
        let vocab = Vocabulary::build(&[toks("a b"), toks("a")], 10).unwrap();
        assert_eq!(vocab.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(vocab.id("a"), Some(2));
    }

    #[test]
    fn build_single_token() {
        let vocab = Vocabulary::build(&[toks("x")], 3).unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.id("x"), Some(2));
    }

    #[test]
    fn build_truncates_with_first_occurrence_ties() {
        // 100 distinct tokens, each seen once: the first 48 survive.
        let line: Vec<String> = (0..100).map(|i| format!("t{i}")).collect();
        let vocab = Vocabulary::build(std::slice::from_ref(&line), 50).unwrap();
        assert_eq!(vocab.len(), 50);
        let expected: Vec<&str> = line[..48].iter().map(String::as_str).collect();
        assert_eq!(&vocab.tokens()[2..], expected.as_slice());
    }

    #[test]
    fn build_rejects_empty_corpus() {
        let err = Vocabulary::build::<String>(&[vec![]], 10).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
        assert!(Vocabulary::build::<String>(&[], 10).is_err());
    }

    #[test]
    fn encode_maps_oov_to_unk() {
        let vocab = Vocabulary::build(&[toks("a")], 10).unwrap();
        assert_eq!(vocab.encode(&toks("a zzz")).ids(), &[2, UNK_ID]);
        assert!(vocab.encode::<String>(&[]).is_empty());
    }

    #[test]
    fn decode_inverts_encode() {
        let line = toks("the cat sat on the mat");
        let vocab = Vocabulary::build(std::slice::from_ref(&line), 100).unwrap();
        assert_eq!(vocab.decode(&vocab.encode(&line)), line);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = Vocabulary::build(&[toks("b a b c")], 10).unwrap();
        vocab.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "<pad>\n<unk>\nb\na\nc\n");
        assert_eq!(Vocabulary::load(&path).unwrap(), vocab);
    }

    #[test]
    fn copy_and_reverse_targets() {
        for pair in generate_task(&spec(TaskKind::Copy)).unwrap() {
            assert_eq!(pair.source, pair.target);
        }
        for pair in generate_task(&spec(TaskKind::Reverse)).unwrap() {
            let mut rev = pair.source.ids().to_vec();
            rev.reverse();
            assert_eq!(pair.target.ids(), rev.as_slice());
        }
    }

    #[test]
    fn dict_substitution_applies_bijection() {
        let s = spec(TaskKind::DictSubstitution);
        let table = s.substitution_table();
        let mut sorted = table[RESERVED..].to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (2..12).collect::<Vec<_>>());
        for pair in generate_task(&s).unwrap() {
            let mapped: Vec<TokenId> = pair.source.iter().map(|t| table[t as usize]).collect();
            assert_eq!(pair.target.ids(), mapped.as_slice());
        }
    }

    #[test]
    fn mapping_is_shared_across_sampling_seeds() {
        let a = spec(TaskKind::DictSubstitution);
        let b = SyntheticTaskSpec {
            seed: 99,
            ..a.clone()
        };
        assert_eq!(a.substitution_table(), b.substitution_table());
    }

    #[test]
    fn sources_have_no_adjacent_repeats() {
        for pair in generate_task(&spec(TaskKind::Copy)).unwrap() {
            assert!(pair.source.ids().windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = [
            SyntheticTaskSpec {
                min_len: 0,
                ..spec(TaskKind::Copy)
            },
            SyntheticTaskSpec {
                max_len: 1,
                ..spec(TaskKind::Copy)
            },
            SyntheticTaskSpec {
                vocab_size: 3,
                ..spec(TaskKind::Copy)
            },
        ];
        for s in bad {
            assert!(matches!(generate_task(&s), Err(Error::Config(_))));
        }
    }

    #[test]
    fn noise_changes_lengths_but_not_sources() {
        let clean = generate_task(&spec(TaskKind::Copy)).unwrap();
        let noisy = corrupt_targets(&clean, 0.5, 10, 1).unwrap();
        assert!(clean.iter().zip(&noisy).all(|(a, b)| a.source == b.source));
        assert!(clean
            .iter()
            .zip(&noisy)
            .any(|(a, b)| a.target.len() != b.target.len()));
        assert_eq!(corrupt_targets(&clean, 0.0, 10, 1).unwrap(), clean);
    }
}
