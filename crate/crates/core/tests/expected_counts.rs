use bon_core::probmodel::{expected_bag, expected_count_gradient};
use bon_core::{
    count_ngrams, expected_counts, expected_ngram_count, oracle_expected_count, Ngram, ProbTable,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_table(rng: &mut impl Rng, len: usize, vocab: usize) -> ProbTable {
    let rows: Vec<Vec<f64>> = (0..len)
        .map(|_| {
            let raw: Vec<f64> = (0..vocab).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    ProbTable::from_rows(&rows).unwrap()
}

/// Expected count by explicit recursion over every sequence.
fn enumerate(table: &ProbTable, g: &[u32]) -> f64 {
    fn walk(table: &ProbTable, g: &[u32], prefix: &mut Vec<u32>, prob: f64, acc: &mut f64) {
        if prefix.len() == table.len() {
            let hits = prefix.windows(g.len()).filter(|w| *w == g).count();
            *acc += prob * hits as f64;
            return;
        }
        for w in 0..table.vocab() as u32 {
            let p = table.prob(prefix.len(), w);
            prefix.push(w);
            walk(table, g, prefix, prob * p, acc);
            prefix.pop();
        }
    }
    let mut acc = 0.0;
    walk(table, g, &mut Vec::new(), 1.0, &mut acc);
    acc
}

fn all_ngrams(vocab: usize, n: usize) -> Vec<Ngram> {
    let mut out = Vec::new();
    let mut ids = vec![0u32; n];
    loop {
        out.push(Ngram::new(&ids).unwrap());
        let mut k = n;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            ids[k] += 1;
            if (ids[k] as usize) < vocab {
                break;
            }
            ids[k] = 0;
        }
    }
}

#[test]
fn sliding_window_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (vocab, len, n) in [(2, 6, 2), (3, 5, 2), (3, 5, 3), (4, 4, 2), (5, 4, 4)] {
        let tol = 1e-9 * (len - n + 1) as f64;
        for _ in 0..20 {
            let table = random_table(&mut rng, len, vocab);
            let reference: Vec<u32> = (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect();
            for (g, _) in count_ngrams(&reference, n).unwrap().iter() {
                let want = enumerate(&table, g.ids());
                assert!((expected_ngram_count(&table, g) - want).abs() <= tol);
                assert!((oracle_expected_count(&table, g).unwrap() - want).abs() <= tol);
            }
        }
    }
}

#[test]
fn expected_counts_sum_to_window_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for vocab in 2..=5 {
        for n in 1..=3 {
            for len in n..=6 {
                let table = random_table(&mut rng, len, vocab);
                let grams = all_ngrams(vocab, n);
                let total: f64 = expected_counts(&table, &grams).iter().sum();
                assert!(
                    (total - (len - n + 1) as f64).abs() < 1e-9,
                    "V={vocab} n={n} T={len}"
                );
            }
        }
    }
}

#[test]
fn sparse_and_dense_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for vocab in 2..=4 {
        for len in 1..=6 {
            for n in 1..=3 {
                let mut table = random_table(&mut rng, len, vocab);
                // Zero out an entry so the sparse path has something to skip.
                if vocab > 2 {
                    let rows: Vec<Vec<f64>> = (0..len)
                        .map(|t| {
                            let mut r = table.row(t).to_vec();
                            let moved = r[1];
                            r[1] = 0.0;
                            r[0] += moved;
                            r
                        })
                        .collect();
                    table = ProbTable::from_rows(&rows).unwrap();
                }
                let grams = all_ngrams(vocab, n);
                let batch = expected_counts(&table, &grams);
                for (g, b) in grams.iter().zip(&batch) {
                    assert_eq!(b.to_bits(), expected_ngram_count(&table, g).to_bits());
                }
            }
        }
    }
}

#[test]
fn one_hot_table_reproduces_discrete_bag() {
    let sentence = [2u32, 3, 2, 3, 4];
    let table = ProbTable::one_hot(&sentence, 5).unwrap();
    for n in 1..=4 {
        let bag = count_ngrams(&sentence, n).unwrap();
        let expected = expected_bag(&table, &bag);
        for (g, c) in bag.iter() {
            assert_eq!(expected.get(g), c);
        }
    }
}

#[test]
fn count_gradient_matches_enumeration_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let table = random_table(&mut rng, 4, 3);
    let g = Ngram::new(&[1, 2]).unwrap();
    let grad = expected_count_gradient(&table, &g);
    let h = 1e-6;
    for t in 0..4 {
        for w in 0..3 {
            let fd = (enumerate_unnormalized(&table.perturbed(t, w, h), g.ids())
                - enumerate_unnormalized(&table.perturbed(t, w, -h), g.ids()))
                / (2.0 * h);
            assert!(
                (grad[(t, w)] - fd).abs() < 1e-7,
                "({t},{w}) {} vs {fd}",
                grad[(t, w)]
            );
        }
    }
}

/// Sum over windows of the product of entries, valid for unnormalized rows.
fn enumerate_unnormalized(table: &ProbTable, g: &[u32]) -> f64 {
    (0..=table.len() - g.len())
        .map(|t| {
            g.iter()
                .enumerate()
                .map(|(i, &w)| table.prob(t + i, w))
                .product::<f64>()
        })
        .sum()
}

proptest! {
    #[test]
    fn counts_are_bounded(seed in any::<u64>(), vocab in 2usize..6, len in 1usize..8, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_table(&mut rng, len, vocab);
        let g: Vec<u32> = (0..n).map(|_| rng.gen_range(0..vocab as u32)).collect();
        let c = expected_ngram_count(&table, &Ngram::new(&g).unwrap());
        let windows = (len + 1).saturating_sub(n) as f64;
        prop_assert!(c >= 0.0 && c <= windows + 1e-12);
        if len < n {
            prop_assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn short_table_gives_empty_expectation(seed in any::<u64>(), len in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_table(&mut rng, len, 3);
        let support = count_ngrams(&[0, 1, 2, 0, 1], 4).unwrap();
        let bag = expected_bag(&table, &support);
        prop_assert_eq!(bag.l1_norm(), 0.0);
    }
}
