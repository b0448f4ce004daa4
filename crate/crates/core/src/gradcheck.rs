//! Finite-difference checks of loss gradients, both with respect to the
//! probability table and through the decoder parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{TokenId, TokenSequence, RESERVED};
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::matrix::Matrix;
use crate::model::nat::{ModelDims, NatModel};
use crate::ngram::count_ngrams;
use crate::probmodel::{expected_ngram_count, ProbTable};

/// Central-difference step on table entries.
pub const TABLE_STEP: f64 = 1e-6;
/// Central-difference step on model parameters.
pub const PARAM_STEP: f64 = 1e-4;
/// Denominator floor of the relative error, so entries whose true gradient
/// is (near) zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;
/// Samples whose smallest gap `|E[count(g)] - count_ref(g)|` is below this
/// are resampled, since the BoN loss has a kink there.
pub const MIN_TIE_GAP: f64 = 1e-6;

const MAX_RESAMPLES: usize = 10_000;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub loss: String,
    /// `table` or `model`.
    pub level: &'static str,
    pub probes: usize,
    pub worst_rel_err: f64,
    /// Samples rejected for sitting too close to a kink.
    pub resampled: usize,
}

impl GradcheckReport {
    fn new(spec: &LossSpec, level: &'static str) -> Self {
        GradcheckReport {
            loss: spec.to_string(),
            level,
            probes: 0,
            worst_rel_err: 0.0,
            resampled: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.probes += 1;
        self.worst_rel_err = self.worst_rel_err.max(relative_error(analytic, numeric));
    }
}

/// A table of softmax rows over random logits.
pub fn random_table<R: Rng>(rng: &mut R, len: usize, vocab: usize) -> Result<ProbTable> {
    let mut probs = Matrix::zeros(len, vocab);
    for t in 0..len {
        let row = probs.row_mut(t);
        for x in row.iter_mut() {
            *x = (3.0 * rng.gen::<f64>()).exp();
        }
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= sum);
    }
    ProbTable::new(probs)
}

fn random_sentence<R: Rng>(rng: &mut R, len: usize, vocab: usize, lowest: usize) -> TokenSequence {
    (0..len)
        .map(|_| rng.gen_range(lowest..vocab) as TokenId)
        .collect::<Vec<_>>()
        .into()
}

/// Distance from the nearest kink of the BoN term, `+inf` when the loss has
/// none.
fn tie_gap(spec: &LossSpec, table: &ProbTable, reference: &TokenSequence) -> Result<f64> {
    let Some(n) = spec.order() else {
        return Ok(f64::INFINITY);
    };
    if table.len() < n || reference.len() < n {
        return Ok(f64::INFINITY);
    }
    let bag = count_ngrams(reference.ids(), n)?;
    Ok(bag
        .iter()
        .map(|(g, c)| (expected_ngram_count(table, g) - c).abs())
        .fold(f64::INFINITY, f64::min))
}

/// Gradient with respect to the table entries, `probes_per_sample` random
/// entries per random table, until `probes` entries were compared.
pub fn check_table_gradient(
    spec: &LossSpec,
    vocab: usize,
    len: usize,
    probes: usize,
    probes_per_sample: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    if vocab < 2 || len == 0 || probes_per_sample == 0 {
        return Err(Error::arg(
            "gradient check needs vocab >= 2, len >= 1 and probes per sample >= 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport::new(spec, "table");
    let threshold = MIN_TIE_GAP.max(4.0 * TABLE_STEP * spec.order().unwrap_or(1) as f64);
    while report.probes < probes {
        let table = random_table(&mut rng, len, vocab)?;
        let reference = random_sentence(&mut rng, len, vocab, 0);
        if tie_gap(spec, &table, &reference)? < threshold {
            report.resampled += 1;
            if report.resampled > MAX_RESAMPLES {
                return Err(Error::arg("too many samples near a kink"));
            }
            continue;
        }
        let analytic = spec.evaluate(&table, &reference)?.grad;
        for _ in 0..probes_per_sample.min(probes - report.probes) {
            let (t, w) = (rng.gen_range(0..len), rng.gen_range(0..vocab));
            let plus = spec
                .evaluate(&table.perturbed(t, w, TABLE_STEP), &reference)?
                .value;
            let minus = spec
                .evaluate(&table.perturbed(t, w, -TABLE_STEP), &reference)?
                .value;
            report.record(analytic[(t, w)], (plus - minus) / (2.0 * TABLE_STEP));
        }
    }
    Ok(report)
}

fn model_loss(
    model: &NatModel,
    spec: &LossSpec,
    source: &TokenSequence,
    reference: &TokenSequence,
) -> Result<f64> {
    Ok(spec
        .evaluate(&model.forward(source, reference.len())?, reference)?
        .value)
}

/// Gradient with respect to decoder parameters of a randomly initialized
/// model, probing random coordinates across all parameter blocks.
pub fn check_model_gradient(
    spec: &LossSpec,
    dims: ModelDims,
    target_len: usize,
    probes: usize,
    probes_per_sample: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    dims.validate()?;
    if dims.vocab <= RESERVED
        || target_len == 0
        || target_len > dims.max_len
        || probes_per_sample == 0
    {
        return Err(Error::arg("gradient check dimensions are inconsistent"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport::new(spec, "model");
    // A parameter step moves expected counts by roughly step * |dE/dtheta|.
    let threshold = MIN_TIE_GAP.max(10.0 * PARAM_STEP);
    while report.probes < probes {
        let mut model = NatModel::init(dims, &mut rng)?;
        let src_len = rng.gen_range(1..=dims.max_len);
        let source = random_sentence(&mut rng, src_len, dims.vocab, RESERVED);
        let reference = random_sentence(&mut rng, target_len, dims.vocab, RESERVED);

        let fwd = model.forward_cached(&source, target_len)?;
        if tie_gap(spec, fwd.table(), &reference)? < threshold {
            report.resampled += 1;
            if report.resampled > MAX_RESAMPLES {
                return Err(Error::arg("too many samples near a kink"));
            }
            continue;
        }
        let d_probs = spec.evaluate(fwd.table(), &reference)?.grad;
        let mut grads = NatModel::zeros(dims);
        model.backward(&fwd, &d_probs, &mut grads);

        let sizes: Vec<usize> = model
            .params()
            .iter()
            .map(|(_, m)| m.as_slice().len())
            .collect();
        let total: usize = sizes.iter().sum();
        for _ in 0..probes_per_sample.min(probes - report.probes) {
            let mut flat = rng.gen_range(0..total);
            let mut block = 0;
            while flat >= sizes[block] {
                flat -= sizes[block];
                block += 1;
            }
            let analytic = grads.params()[block].1.as_slice()[flat];
            let original = model.params()[block].1.as_slice()[flat];
            model.params_mut()[block].1.as_mut_slice()[flat] = original + PARAM_STEP;
            let plus = model_loss(&model, spec, &source, &reference)?;
            model.params_mut()[block].1.as_mut_slice()[flat] = original - PARAM_STEP;
            let minus = model_loss(&model, spec, &source, &reference)?;
            model.params_mut()[block].1.as_mut_slice()[flat] = original;
            report.record(analytic, (plus - minus) / (2.0 * PARAM_STEP));
        }
    }
    Ok(report)
}
