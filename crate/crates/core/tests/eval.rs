use bon_core::corpus::{corrupt_targets, generate_task, SyntheticTaskSpec};
use bon_core::eval::{
    bleu, correlation_study, length_bucket_bleu, pearson, removed_token_report, smoothed_bleu,
    split_short_long, BleuStats, DEFAULT_LOSSES,
};
use bon_core::model::train;
use bon_core::{
    Checkpoint, Error, LossSpec, ModelDims, ParallelPair, TaskKind, TokenSequence, TrainConfig,
};
use std::sync::OnceLock;

fn seq(ids: &[u32]) -> TokenSequence {
    TokenSequence::new(ids.to_vec())
}

fn pair(src: &[u32], tgt: &[u32]) -> ParallelPair {
    ParallelPair::new(seq(src), seq(tgt)).unwrap()
}

// Independent reference values for this set: sacrebleu 2.x,
// corpus_bleu(tokenize="none", smooth_method="none") over tokens "t<id>".
fn toy_set() -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let hyps = vec![
        vec![2, 3, 4, 5, 6],
        vec![7, 7, 8, 9],
        vec![2, 3, 9, 4, 5, 6, 7],
        vec![10, 11, 12],
        vec![5, 6, 7, 8, 9, 10],
    ];
    let refs = vec![
        vec![2, 3, 4, 5, 6, 7],
        vec![7, 8, 9, 10],
        vec![2, 3, 4, 5, 6, 7, 8],
        vec![10, 11, 12, 13],
        vec![5, 6, 7, 8, 2, 10],
    ];
    (hyps, refs)
}

#[test]
fn bleu_matches_reference_implementation() {
    let (hyps, refs) = toy_set();
    let score = bleu(&hyps, &refs).unwrap();
    assert!((score.value - 0.5823649593269896).abs() < 1e-6, "{score:?}");
    assert_eq!(
        score.precisions,
        [22.0 / 25.0, 15.0 / 20.0, 9.0 / 15.0, 4.0 / 10.0]
    );
    assert!((score.brevity_penalty - 0.9231163463866358).abs() < 1e-12);
    assert_eq!((score.hyp_len, score.ref_len), (25, 27));
}

#[test]
fn smoothed_bleu_only_touches_higher_orders() {
    let (hyps, refs) = toy_set();
    let s = smoothed_bleu(&hyps, &refs).unwrap();
    assert_eq!(s.precisions[0], 22.0 / 25.0);
    assert_eq!(s.precisions[3], 5.0 / 11.0);
}

#[test]
fn bleu_of_identical_corpus_is_one() {
    let refs = vec![vec![2, 3, 4, 5], vec![4, 5, 6, 7, 8, 9]];
    assert_eq!(bleu(&refs, &refs).unwrap().value, 1.0);
}

#[test]
fn pearson_examples() {
    assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
    let xs = [0.3, 1.2, 2.2, 5.0];
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(
        pearson(&[2.0; 3], &xs[..3]),
        Err(Error::UndefinedCorrelation(_))
    ));
}

#[test]
fn split_examples() {
    let corpus: Vec<ParallelPair> = [5usize, 2, 9, 3]
        .iter()
        .map(|&n| pair(&vec![2; n], &[2]))
        .collect();
    let (short, long) = split_short_long(&corpus);
    let lens = |v: &[ParallelPair]| v.iter().map(|p| p.source.len()).collect::<Vec<_>>();
    assert_eq!(lens(&short), vec![2, 3]);
    assert_eq!(lens(&long), vec![5, 9]);

    let (short, long) = split_short_long(
        &corpus[..3]
            .iter()
            .chain(&corpus[..2])
            .cloned()
            .collect::<Vec<_>>(),
    );
    assert_eq!((short.len(), long.len()), (2, 3));
}

fn dims(vocab: usize) -> ModelDims {
    ModelDims {
        vocab,
        d_model: 32,
        hidden: 64,
        max_len: 20,
        max_len_diff: 8,
    }
}

/// A briefly trained CE model on the dict task with lengths 2..16 and 10%
/// target noise, plus a held-out corpus with the same noise.
fn trained() -> &'static (Checkpoint, Vec<ParallelPair>) {
    static CELL: OnceLock<(Checkpoint, Vec<ParallelPair>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = SyntheticTaskSpec {
            kind: TaskKind::DictSubstitution,
            vocab_size: 20,
            min_len: 2,
            max_len: 16,
            samples: 1000,
            seed: 1,
            mapping_seed: 9,
        };
        let corpus = corrupt_targets(&generate_task(&spec).unwrap(), 0.1, 20, 5).unwrap();
        let held_out = generate_task(&SyntheticTaskSpec {
            samples: 600,
            seed: 2,
            ..spec.clone()
        })
        .unwrap();
        let held_out = corrupt_targets(&held_out, 0.1, 20, 6).unwrap();
        let mut cfg = TrainConfig {
            steps: 300,
            seed: 3,
            ..TrainConfig::default()
        };
        cfg.adam.lr = 3e-3;
        let out = train(&cfg, &dims(spec.total_vocab()), &corpus, None).unwrap();
        (out.checkpoint, held_out)
    })
}

#[test]
fn removal_counts_are_additive() {
    let (ckpt, corpus) = trained();
    let rows = removed_token_report(ckpt, corpus).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.bucket).collect();
    assert_eq!(names, ["short", "long", "all"]);
    assert_eq!(rows[2].removed, rows[0].removed + rows[1].removed);
    assert_eq!(
        rows[2].ref_tokens,
        corpus.iter().map(|p| p.target.len()).sum::<usize>()
    );
    assert_eq!(rows[2].ref_tokens, rows[0].ref_tokens + rows[1].ref_tokens);
    for r in &rows {
        assert_eq!(
            r.removed_pct,
            100.0 * r.removed as f64 / r.ref_tokens as f64
        );
    }
}

#[test]
fn single_bucket_is_corpus_bleu() {
    let (ckpt, corpus) = trained();
    let buckets = length_bucket_bleu(ckpt, corpus, &[]).unwrap();
    assert_eq!(buckets.len(), 1);
    assert_eq!(buckets[0].count, corpus.len());
    let whole = bon_core::eval::corpus_bleu(ckpt, corpus).unwrap();
    assert_eq!(buckets[0].bleu, Some(whole.value));
}

#[test]
fn empty_bucket_has_no_bleu() {
    let (ckpt, corpus) = trained();
    let buckets = length_bucket_bleu(ckpt, corpus, &[4, 8, 12, 100]).unwrap();
    assert_eq!(buckets.len(), 5);
    assert_eq!(buckets[4].count, 0);
    assert_eq!(buckets[4].bleu, None);
    assert_eq!(buckets.iter().map(|b| b.count).sum::<usize>(), corpus.len());
}

#[test]
fn identical_buckets_score_identically() {
    let (ckpt, corpus) = trained();
    let one: Vec<ParallelPair> = corpus
        .iter()
        .filter(|p| p.target.len() == 5)
        .take(20)
        .cloned()
        .collect();
    let mut twice = one.clone();
    twice.extend(one.iter().cloned());
    let a = length_bucket_bleu(ckpt, &one, &[5]).unwrap();
    let b = length_bucket_bleu(ckpt, &twice, &[5]).unwrap();
    assert_eq!(a[0].bleu, b[0].bleu);
}

#[test]
fn long_sentences_score_no_better() {
    let (ckpt, corpus) = trained();
    let buckets = length_bucket_bleu(ckpt, corpus, &[8]).unwrap();
    let (short, long) = (buckets[0].bleu.unwrap(), buckets[1].bleu.unwrap());
    assert!(long <= short, "short {short} long {long}");
}

#[test]
fn correlation_study_is_deterministic() {
    let (ckpt, corpus) = trained();
    let a = correlation_study(ckpt, corpus, &DEFAULT_LOSSES, 20, 30, 4).unwrap();
    let b = correlation_study(ckpt, corpus, &DEFAULT_LOSSES, 20, 30, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    for r in &a {
        assert_eq!(r.points.len(), 20);
        let v = r.r.unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
    assert!(correlation_study(ckpt, corpus, &DEFAULT_LOSSES, 21, 30, 4).is_err());
}

#[test]
fn subsets_are_disjoint_and_cover() {
    // With one subset per pair, the subset BLEUs are the sentence BLEUs of
    // a permutation of the corpus.
    let (ckpt, corpus) = trained();
    let head = &corpus[..40];
    let reports = correlation_study(ckpt, head, &[LossSpec::NormalizedCe], 40, 1, 8).unwrap();
    let decoded = bon_core::eval::decode_corpus(ckpt, head).unwrap();
    let mut want: Vec<u64> = decoded
        .iter()
        .zip(head)
        .map(|(d, p)| {
            BleuStats::sentence(d.cleaned.ids(), p.target.ids())
                .smoothed_score()
                .value
                .to_bits()
        })
        .collect();
    let mut got: Vec<u64> = reports[0].points.iter().map(|p| p.bleu.to_bits()).collect();
    want.sort_unstable();
    got.sort_unstable();
    assert_eq!(got, want);
}

#[test]
fn constant_loss_gives_no_correlation() {
    let (ckpt, _) = trained();
    // Single-token references make every BoN order >= 2 degenerate, so its
    // subset loss is constant.
    let corpus: Vec<ParallelPair> = (0..40)
        .map(|i| pair(&[2 + (i % 5) as u32, 3], &[2 + (i % 7) as u32]))
        .collect();
    let reports = correlation_study(
        ckpt,
        &corpus,
        &[LossSpec::Bon(2), LossSpec::NormalizedCe],
        10,
        4,
        1,
    )
    .unwrap();
    assert_eq!(reports[0].r, None);
    assert_eq!(reports.len(), 2);
}
