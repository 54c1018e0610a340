use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fineehr::siamese::{pair_loss_grad, SiameseNetwork};
use fineehr::metrics::{pr_auc, roc_auc, ScoredSet};
use fineehr::textprep::{build_vocabulary, TokenizedNote};
use fineehr::embed::{train_word2vec, Word2VecParams};

fn bench_pair_loss_grad(c: &mut Criterion) {
    let net = SiameseNetwork::init(vec![64, 128, 64], 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x_a: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x_c: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.bench_function("pair_loss_grad_64_128_64", |b| {
        b.iter(|| pair_loss_grad(&net, &x_a, &x_c, false, 1.0).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.gen::<bool>()).collect();
    c.bench_function("roc_auc_10k", |b| {
        b.iter_batched(
            || ScoredSet::new(scores.clone(), labels.clone()).unwrap(),
            |s| roc_auc(&s).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("pr_auc_10k", |b| {
        b.iter_batched(
            || ScoredSet::new(scores.clone(), labels.clone()).unwrap(),
            |s| pr_auc(&s).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_word2vec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let notes: Vec<TokenizedNote> = (0..50)
        .map(|i| TokenizedNote {
            admission_id: format!("a{i}"),
            category: "X".into(),
            sentences: (0..5)
                .map(|_| {
                    (0..20)
                        .map(|_| format!("w{}", rng.gen_range(0..100)))
                        .collect()
                })
                .collect(),
        })
        .collect();
    let vocab = build_vocabulary(&notes, 1).unwrap();
    let params = Word2VecParams {
        dim: 32,
        epochs: 1,
        subsample_threshold: 0.0,
        ..Word2VecParams::default()
    };
    c.bench_function("word2vec_5k_tokens_epoch", |b| {
        b.iter(|| train_word2vec(&notes, &vocab, &params).unwrap())
    });
}

criterion_group!(benches, bench_pair_loss_grad, bench_metrics, bench_word2vec);
criterion_main!(benches);
