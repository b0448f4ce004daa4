//! Training objectives over a [`ProbTable`] and their gradients with respect
//! to the table entries.
//!
//! The bag-of-ngrams distance only needs the n-grams of the reference:
//!
//! ```text
//! L1(model, ref) = 2 * (T - n + 1 - sum_{g in ref} min(E[count(g)], count_ref(g)))
//! ```
//!
//! and [`bon_loss`] divides it by `2 (T - n + 1)` to land in `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ngram::{check_order, count_ngrams, Ngram};
use crate::probmodel::{accumulate_count_gradient, expected_counts, ProbTable};

/// Lower clamp applied to probabilities inside the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// `d value / d p(y_t = w)`, same shape as the table.
    pub grad: Matrix,
    /// Matched n-gram mass `sum_g min(E[count(g)], count_ref(g))`; zero for
    /// cross-entropy.
    pub matched: f64,
    /// Set when the table or reference is shorter than `n` and the BoN term
    /// was defined as zero.
    pub degenerate: bool,
}

impl LossResult {
    fn zero(table: &ProbTable, degenerate: bool) -> Self {
        LossResult {
            value: 0.0,
            grad: Matrix::zeros(table.len(), table.vocab()),
            matched: 0.0,
            degenerate,
        }
    }
}

/// Mixing weight and n-gram order of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub alpha: f64,
    pub n: usize,
}

impl JointConfig {
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        let cfg = JointConfig { alpha, n };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        check_order(self.n).map_err(|e| Error::Config(e.to_string()))
    }
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig { alpha: 0.1, n: 2 }
    }
}

/// Summed token negative log-likelihood of `reference` under the table.
pub fn cross_entropy(table: &ProbTable, reference: &TokenSequence) -> Result<LossResult> {
    if reference.len() != table.len() {
        return Err(Error::arg(format!(
            "reference length {} does not match table length {}",
            reference.len(),
            table.len()
        )));
    }
    let mut out = LossResult::zero(table, false);
    for (t, w) in reference.iter().enumerate() {
        if w as usize >= table.vocab() {
            return Err(Error::arg(format!(
                "reference token {w} outside vocabulary"
            )));
        }
        let p = table.prob(t, w);
        let clamped = p.max(LOG_CLAMP);
        out.value -= clamped.ln();
        if p >= LOG_CLAMP {
            out.grad[(t, w as usize)] = -1.0 / p;
        }
    }
    Ok(out)
}

/// L1 distance between the expected bag of the table and the reference bag.
///
/// The length term uses the table's `T`. When `T < n` or the reference is
/// shorter than `n`, returns zero with `degenerate` set.
pub fn bon_l1(table: &ProbTable, reference: &TokenSequence, n: usize) -> Result<LossResult> {
    check_order(n)?;
    if table.len() < n || reference.len() < n {
        return Ok(LossResult::zero(table, true));
    }
    let ref_bag = count_ngrams(reference.ids(), n)?;
    let (grams, ref_counts): (Vec<Ngram>, Vec<f64>) = ref_bag.iter().map(|(g, c)| (*g, c)).unzip();
    let model_counts = expected_counts(table, &grams);

    let mut out = LossResult::zero(table, false);
    for ((g, &ours), &theirs) in grams.iter().zip(&model_counts).zip(&ref_counts) {
        out.matched += ours.min(theirs);
        // Subgradient: at ties the gradient flows through the model count.
        if ours <= theirs {
            accumulate_count_gradient(table, g, -2.0, &mut out.grad);
        }
    }
    // The matched mass can exceed T - n + 1 by rounding only.
    out.value = (2.0 * (table.windows(n) as f64 - out.matched)).max(0.0);
    Ok(out)
}

/// [`bon_l1`] normalized by `2 (T - n + 1)`.
pub fn bon_loss(table: &ProbTable, reference: &TokenSequence, n: usize) -> Result<LossResult> {
    let mut out = bon_l1(table, reference, n)?;
    if !out.degenerate {
        let norm = 1.0 / (2.0 * table.windows(n) as f64);
        out.value *= norm;
        out.grad.scale(norm);
    }
    Ok(out)
}

/// `alpha * cross_entropy + (1 - alpha) * bon_loss`. At `alpha = 1` and
/// `alpha = 0` the corresponding component is returned unchanged.
pub fn joint_loss(
    table: &ProbTable,
    reference: &TokenSequence,
    cfg: &JointConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    if cfg.alpha == 1.0 {
        return cross_entropy(table, reference);
    }
    if cfg.alpha == 0.0 {
        return bon_loss(table, reference, cfg.n);
    }
    let ce = cross_entropy(table, reference)?;
    let bon = bon_loss(table, reference, cfg.n)?;
    let mut grad = ce.grad;
    grad.scale(cfg.alpha);
    grad.add_scaled(&bon.grad, 1.0 - cfg.alpha);
    Ok(LossResult {
        value: cfg.alpha * ce.value + (1.0 - cfg.alpha) * bon.value,
        grad,
        matched: bon.matched,
        degenerate: bon.degenerate,
    })
}

/// Loss selector used by the analysis and gradient-check tools.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    /// Cross-entropy divided by the reference length.
    NormalizedCe,
    CrossEntropy,
    Bon(usize),
    Joint(JointConfig),
}

impl LossSpec {
    pub fn evaluate(&self, table: &ProbTable, reference: &TokenSequence) -> Result<LossResult> {
        match *self {
            LossSpec::NormalizedCe => {
                let mut out = cross_entropy(table, reference)?;
                let norm = 1.0 / reference.len() as f64;
                out.value *= norm;
                out.grad.scale(norm);
                Ok(out)
            }
            LossSpec::CrossEntropy => cross_entropy(table, reference),
            LossSpec::Bon(n) => bon_loss(table, reference, n),
            LossSpec::Joint(cfg) => joint_loss(table, reference, &cfg),
        }
    }

    /// BoN order involved, if any.
    pub fn order(&self) -> Option<usize> {
        match *self {
            LossSpec::Bon(n) => Some(n),
            LossSpec::Joint(cfg) if cfg.alpha < 1.0 => Some(cfg.n),
            _ => None,
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::NormalizedCe => f.write_str("ce"),
            LossSpec::CrossEntropy => f.write_str("ce-sum"),
            LossSpec::Bon(n) => write!(f, "bon{n}"),
            LossSpec::Joint(cfg) => write!(f, "joint{}@{}", cfg.n, cfg.alpha),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    /// Accepts `ce`, `ce-sum`, `bonN` and `jointN@ALPHA`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown loss '{s}'"));
        match s {
            "ce" => return Ok(LossSpec::NormalizedCe),
            "ce-sum" => return Ok(LossSpec::CrossEntropy),
            _ => {}
        }
        if let Some(n) = s.strip_prefix("bon") {
            let n: usize = n.parse().map_err(|_| bad())?;
            check_order(n).map_err(|e| Error::Config(e.to_string()))?;
            return Ok(LossSpec::Bon(n));
        }
        if let Some(rest) = s.strip_prefix("joint") {
            let (n, alpha) = rest.split_once('@').ok_or_else(bad)?;
            let cfg = JointConfig::new(
                alpha.parse().map_err(|_| bad())?,
                n.parse().map_err(|_| bad())?,
            )?;
            return Ok(LossSpec::Joint(cfg));
        }
        Err(bad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::new(ids.to_vec())
    }

    #[test]
    fn ce_of_matching_one_hot_is_zero() {
        let table = ProbTable::one_hot(&[1, 2, 0], 3).unwrap();
        let out = cross_entropy(&table, &seq(&[1, 2, 0])).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.grad[(0, 1)], -1.0);
    }

    #[test]
    fn ce_of_uniform_table() {
        let table = ProbTable::uniform(3, 4).unwrap();
        let out = cross_entropy(&table, &seq(&[0, 1, 2])).unwrap();
        assert!((out.value - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert!((out.value - 4.1589).abs() < 1e-4);
    }

    #[test]
    fn ce_clamps_zero_probability() {
        let table = ProbTable::one_hot(&[0], 2).unwrap();
        let out = cross_entropy(&table, &seq(&[1])).unwrap();
        assert!((out.value + LOG_CLAMP.ln()).abs() < 1e-9);
        assert!(out.grad.as_slice().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn ce_rejects_length_mismatch() {
        let table = ProbTable::uniform(3, 4).unwrap();
        assert!(matches!(
            cross_entropy(&table, &seq(&[0, 1])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn bon_on_exact_one_hot() {
        let table = ProbTable::one_hot(&[2, 3, 4, 2], 5).unwrap();
        let out = bon_l1(&table, &seq(&[2, 3, 4, 2]), 2).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.matched, 3.0);
        assert_eq!(bon_loss(&table, &seq(&[2, 3, 4, 2]), 2).unwrap().value, 0.0);
    }

    #[test]
    fn bon_on_disjoint_one_hot() {
        let table = ProbTable::one_hot(&[0, 1, 0, 1], 5).unwrap();
        let reference = seq(&[2, 3, 4, 2]);
        assert_eq!(bon_l1(&table, &reference, 2).unwrap().value, 6.0);
        assert_eq!(bon_loss(&table, &reference, 2).unwrap().value, 1.0);
    }

    #[test]
    fn bon_hand_computed_uniform_case() {
        let table = ProbTable::uniform(2, 2).unwrap();
        let l1 = bon_l1(&table, &seq(&[0, 1]), 2).unwrap();
        assert_eq!(l1.matched, 0.25);
        assert_eq!(l1.value, 1.5);
        assert_eq!(bon_loss(&table, &seq(&[0, 1]), 2).unwrap().value, 0.75);
    }

    #[test]
    fn bon_degenerate_lengths() {
        let table = ProbTable::uniform(1, 3).unwrap();
        let out = bon_loss(&table, &seq(&[0, 1]), 2).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.value, 0.0);
        assert_eq!(out.grad.max_abs(), 0.0);

        let table = ProbTable::uniform(3, 3).unwrap();
        assert!(bon_loss(&table, &seq(&[0]), 2).unwrap().degenerate);
    }

    #[test]
    fn bon_uses_table_length() {
        // T = 3 table against a length-2 reference: 2 windows.
        let table = ProbTable::one_hot(&[0, 1, 2], 3).unwrap();
        let out = bon_l1(&table, &seq(&[0, 1]), 2).unwrap();
        assert_eq!(out.matched, 1.0);
        assert_eq!(out.value, 2.0);
    }

    #[test]
    fn joint_endpoints_are_exact() {
        let table = ProbTable::from_rows(&[
            vec![0.2, 0.5, 0.3],
            vec![0.6, 0.1, 0.3],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let reference = seq(&[1, 0, 2]);
        let ce = cross_entropy(&table, &reference).unwrap();
        let bon = bon_loss(&table, &reference, 2).unwrap();
        assert_eq!(
            joint_loss(&table, &reference, &JointConfig::new(1.0, 2).unwrap()).unwrap(),
            ce
        );
        assert_eq!(
            joint_loss(&table, &reference, &JointConfig::new(0.0, 2).unwrap()).unwrap(),
            bon
        );
        let mixed = joint_loss(&table, &reference, &JointConfig::new(0.1, 2).unwrap()).unwrap();
        assert!((mixed.value - (0.1 * ce.value + 0.9 * bon.value)).abs() < 1e-12);
    }

    #[test]
    fn joint_config_validation() {
        assert!(JointConfig::new(1.5, 2).is_err());
        assert!(JointConfig::new(0.5, 0).is_err());
        assert!(JointConfig::new(0.5, 5).is_err());
    }

    #[test]
    fn loss_spec_parsing() {
        assert_eq!("ce".parse::<LossSpec>().unwrap(), LossSpec::NormalizedCe);
        assert_eq!("bon3".parse::<LossSpec>().unwrap(), LossSpec::Bon(3));
        assert_eq!(
            "joint2@0.5".parse::<LossSpec>().unwrap(),
            LossSpec::Joint(JointConfig { alpha: 0.5, n: 2 })
        );
        assert!("bon9".parse::<LossSpec>().is_err());
        assert!("mse".parse::<LossSpec>().is_err());
    }
}
