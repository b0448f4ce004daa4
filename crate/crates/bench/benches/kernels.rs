use bon_core::gradcheck::random_table;
use bon_core::model::NatModel;
use bon_core::{
    bon_l1, count_ngrams, expected_counts, oracle_expected_count, ModelDims, Ngram, TokenSequence,
};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sentence(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(2..vocab as u32)).collect()
}

fn expected(c: &mut Criterion) {
    let mut group = c.benchmark_group("expected_counts");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for len in [16, 64] {
        let table = random_table(&mut rng, len, 1000).unwrap();
        let reference = sentence(&mut rng, len, 1000);
        let grams: Vec<Ngram> = count_ngrams(&reference, 2)
            .unwrap()
            .iter()
            .map(|(g, _)| *g)
            .collect();
        group.bench_with_input(BenchmarkId::new("bigrams", len), &grams, |b, grams| {
            b.iter(|| expected_counts(black_box(&table), grams))
        });
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("bon_l1");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=4 {
        let table = random_table(&mut rng, 32, 1000).unwrap();
        let reference = TokenSequence::new(sentence(&mut rng, 32, 1000));
        group.bench_with_input(BenchmarkId::new("n", n), &n, |b, &n| {
            b.iter(|| bon_l1(black_box(&table), &reference, n).unwrap())
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dims = ModelDims {
        vocab: 22,
        d_model: 32,
        hidden: 64,
        max_len: 40,
        max_len_diff: 8,
    };
    let model = NatModel::init(dims, &mut rng).unwrap();
    let source = TokenSequence::new(sentence(&mut rng, 16, 22));
    c.bench_function("forward_16", |b| {
        b.iter(|| model.forward(black_box(&source), 16).unwrap())
    });
}

fn oracle(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let table = random_table(&mut rng, 8, 4).unwrap();
    let g = Ngram::new(&[1, 2]).unwrap();
    c.bench_function("oracle_4^8", |b| {
        b.iter(|| oracle_expected_count(black_box(&table), &g).unwrap())
    });
}

criterion_group!(benches, expected, loss, forward, oracle);
criterion_main!(benches);
