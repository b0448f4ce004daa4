//! Discrete bags of n-grams.

use std::collections::btree_map::{self, BTreeMap};
use std::fmt::{self, Write as _};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// Largest supported n-gram order.
pub const MAX_ORDER: usize = 4;

/// A contiguous run of 1..=4 token ids, stored inline.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ngram {
    len: u8,
    ids: [TokenId; MAX_ORDER],
}

impl Ngram {
    pub fn new(ids: &[TokenId]) -> Result<Self> {
        if ids.is_empty() || ids.len() > MAX_ORDER {
            return Err(Error::arg(format!(
                "n-gram order must be in 1..={MAX_ORDER}, got {}",
                ids.len()
            )));
        }
        let mut buf = [0; MAX_ORDER];
        buf[..ids.len()].copy_from_slice(ids);
        Ok(Ngram {
            len: ids.len() as u8,
            ids: buf,
        })
    }

    pub fn order(&self) -> usize {
        self.len as usize
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids[..self.len as usize]
    }

    pub fn first(&self) -> TokenId {
        self.ids[0]
    }
}

impl fmt::Debug for Ngram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Ngram").field(&self.ids()).finish()
    }
}

pub(crate) fn check_order(n: usize) -> Result<()> {
    if n == 0 || n > MAX_ORDER {
        return Err(Error::arg(format!(
            "n-gram order must be in 1..={MAX_ORDER}, got {n}"
        )));
    }
    Ok(())
}

/// Sparse n-gram → count map of a single order. Zero counts are never
/// stored. Entries iterate in lexicographic id order, so every reduction
/// over a bag is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramBag {
    order: usize,
    counts: BTreeMap<Ngram, f64>,
}

impl NgramBag {
    pub fn new(order: usize) -> Result<Self> {
        check_order(order)?;
        Ok(NgramBag {
            order,
            counts: BTreeMap::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Adds `count` to the entry for `g`. Non-positive additions are
    /// ignored.
    pub fn add(&mut self, g: Ngram, count: f64) {
        assert_eq!(g.order(), self.order, "n-gram order does not match bag");
        if count > 0.0 {
            *self.counts.entry(g).or_insert(0.0) += count;
        }
    }

    pub fn get(&self, g: &Ngram) -> f64 {
        self.counts.get(g).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ngram, f64)> + '_ {
        self.counts.iter().map(|(g, &c)| (g, c))
    }

    pub fn l1_norm(&self) -> f64 {
        self.counts.values().sum()
    }

    /// One line per entry, `g_1 ... g_n<TAB>count`, in lexicographic order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (g, c) in self.iter() {
            let ids: Vec<String> = g.ids().iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{}\t{}", ids.join(" "), c);
        }
        out
    }
}

impl<'a> IntoIterator for &'a NgramBag {
    type Item = (&'a Ngram, &'a f64);
    type IntoIter = btree_map::Iter<'a, Ngram, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.counts.iter()
    }
}

/// Counts every length-`n` window of `sentence`. Sentences shorter than
/// `n` give an empty bag.
pub fn count_ngrams(sentence: &[TokenId], n: usize) -> Result<NgramBag> {
    let mut bag = NgramBag::new(n)?;
    if sentence.len() >= n {
        for window in sentence.windows(n) {
            bag.add(Ngram::new(window)?, 1.0);
        }
    }
    Ok(bag)
}

pub fn bag_l1_norm(bag: &NgramBag) -> f64 {
    bag.l1_norm()
}
