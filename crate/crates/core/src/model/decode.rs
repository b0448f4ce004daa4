use crate::corpus::{TokenId, TokenSequence, PAD_ID};
use crate::error::Result;
use crate::model::nat::{LengthPredictor, NatModel};
use crate::probmodel::argmax_excluding;

/// Target length chosen for `source`: its length plus the predicted
/// difference, clamped to `[1, max_len]`.
pub fn predicted_length(model: &NatModel, lp: &LengthPredictor, source: &TokenSequence) -> usize {
    let len = source.len() as i64 + lp.predict(model, source);
    len.clamp(1, model.dims().max_len as i64) as usize
}

/// Argmax decoding at the predicted length. `<pad>` is never emitted; ties
/// go to the lowest id.
pub fn decode(
    model: &NatModel,
    lp: &LengthPredictor,
    source: &TokenSequence,
) -> Result<TokenSequence> {
    decode_with_length(model, source, predicted_length(model, lp, source))
}

pub fn decode_with_length(
    model: &NatModel,
    source: &TokenSequence,
    len: usize,
) -> Result<TokenSequence> {
    let table = model.forward(source, len)?;
    Ok((0..table.len())
        .map(|t| argmax_excluding(table.row(t), &[PAD_ID]))
        .collect::<Vec<TokenId>>()
        .into())
}

/// Collapses every run of identical adjacent tokens to one token. Returns
/// the cleaned sentence and the number of removed tokens.
pub fn postprocess(sentence: &TokenSequence) -> (TokenSequence, usize) {
    let mut out: Vec<TokenId> = Vec::with_capacity(sentence.len());
    for tok in sentence.iter() {
        if out.last() != Some(&tok) {
            out.push(tok);
        }
    }
    let removed = sentence.len() - out.len();
    (out.into(), removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(ids: &[TokenId]) -> TokenSequence {
        TokenSequence::new(ids.to_vec())
    }

    #[test]
    fn overcorrected_example() {
        // I have to up up start start working
        let (i, have, to, up, start, working) = (2, 3, 4, 5, 6, 7);
        let (out, removed) = postprocess(&seq(&[i, have, to, up, up, start, start, working]));
        assert_eq!(out, seq(&[i, have, to, up, start, working]));
        assert_eq!(removed, 2);
    }

    #[test]
    fn non_adjacent_repeats_survive() {
        assert_eq!(postprocess(&seq(&[2, 3, 2])), (seq(&[2, 3, 2]), 0));
    }

    #[test]
    fn single_run() {
        assert_eq!(postprocess(&seq(&[9, 9, 9, 9])), (seq(&[9]), 3));
        assert_eq!(postprocess(&seq(&[])), (seq(&[]), 0));
    }

    proptest! {
        #[test]
        fn idempotent(s in proptest::collection::vec(2u32..5, 0..20)) {
            let (once, removed) = postprocess(&seq(&s));
            let (twice, again) = postprocess(&once);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(again, 0);
            prop_assert_eq!(once.len() + removed, s.len());
        }
    }
}
