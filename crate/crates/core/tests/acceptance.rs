//! Acceptance gate: one test per shipped claim, each printing a PASS line
//! with the measured evidence (run with `--nocapture` to see them).

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fineehr::corpus::{self, CategorySpec, SyntheticConfig};
use fineehr::embed::{self, train_word2vec, Word2VecParams};
use fineehr::metrics::{pr_auc, roc_auc, ScoredSet};
use fineehr::pipeline::{
    self, build_vocabulary_guarded, LeakageGuard, PipelineConfig, PipelineError, Setting,
};
use fineehr::siamese::{
    contrastive_loss, pair_distance, pair_loss_grad, train_refiners, NotesByCategory,
    SiameseNetwork, SiameseTrainParams,
};
use fineehr::textprep::{build_vocabulary, TokenizedNote};
use fineehr::weighting::{
    joint_loss_grad, AdmissionClassifierHead, CategoryEmbeddingSet, CategoryWeights,
};

fn pass(name: &str, detail: String) {
    println!("[PASS] {name}: {detail}");
}

// ---------------------------------------------------------------------------
// Contrastive-loss exactness: 10,000 random triples, bit-for-bit against a
// direct transliteration of the formula.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_contrastive_loss_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let y: bool = rng.gen();
        let d: f64 = rng.gen_range(0.0..5.0);
        let margin: f64 = rng.gen_range(1e-6..3.0);
        let reference = if y {
            d * d
        } else {
            let s = (margin - d).max(0.0);
            s * s
        };
        let got = contrastive_loss(y, d, margin);
        assert_eq!(
            got.to_bits(),
            reference.to_bits(),
            "loss mismatch at y={y} d={d} margin={margin}: {got} vs {reference}"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 1.0, "took {secs:.3}s, budget 1s");
    pass(
        "contrastive-loss exactness",
        format!("10000 triples bit-identical in {secs:.3}s"),
    );
}

// ---------------------------------------------------------------------------
// Gradient oracle: analytic vs central finite differences on 100 random
// Siamese instances and 100 random weighting-objective instances.
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const FD_ABS_FLOOR: f64 = 1e-8;

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    if (analytic - numeric).abs() <= FD_ABS_FLOOR {
        return;
    }
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
    assert!(
        rel < FD_REL_TOL,
        "{what}: analytic {analytic} vs numeric {numeric} (rel {rel:.3e})"
    );
}

#[test]
fn acceptance_gradient_oracle_siamese() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let dim = rng.gen_range(2..=4);
        let hidden = rng.gen_range(dim..=2 * dim);
        let mut net = SiameseNetwork::init(vec![dim, hidden, dim], rng.gen());
        let x_a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x_c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: bool = rng.gen();
        let mut margin: f64 = rng.gen_range(0.2..2.0);
        // Keep the probe away from the hinge kink where the loss is not
        // differentiable and finite differences are meaningless.
        let d = pair_distance(&net, &x_a, &x_c).unwrap();
        if !y && (margin - d).abs() < 0.05 {
            margin += 0.1;
        }

        let (_, grad) = pair_loss_grad(&net, &x_a, &x_c, y, margin).unwrap();
        for layer in 0..net.weights.len() {
            for i in 0..net.weights[layer].len() {
                let orig = net.weights[layer][i];
                net.weights[layer][i] = orig + FD_STEP;
                let up = loss_of(&net, &x_a, &x_c, y, margin);
                net.weights[layer][i] = orig - FD_STEP;
                let down = loss_of(&net, &x_a, &x_c, y, margin);
                net.weights[layer][i] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                assert_close(
                    grad.weights[layer][i],
                    numeric,
                    &format!("case {case} weight[{layer}][{i}]"),
                );
            }
            for i in 0..net.biases[layer].len() {
                let orig = net.biases[layer][i];
                net.biases[layer][i] = orig + FD_STEP;
                let up = loss_of(&net, &x_a, &x_c, y, margin);
                net.biases[layer][i] = orig - FD_STEP;
                let down = loss_of(&net, &x_a, &x_c, y, margin);
                net.biases[layer][i] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                assert_close(
                    grad.biases[layer][i],
                    numeric,
                    &format!("case {case} bias[{layer}][{i}]"),
                );
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "took {secs:.1}s, budget 30s");
    pass(
        "gradient oracle (siamese)",
        format!("100 nets, all components within rel {FD_REL_TOL:.0e}, {secs:.2}s"),
    );
}

fn loss_of(net: &SiameseNetwork, x_a: &[f64], x_c: &[f64], y: bool, margin: f64) -> f64 {
    let d = pair_distance(net, x_a, x_c).unwrap();
    contrastive_loss(y, d, margin)
}

#[test]
fn acceptance_gradient_oracle_weighting() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..100 {
        let dim = rng.gen_range(2..=4);
        let hidden = rng.gen_range(2..=5);
        let n_cats = rng.gen_range(2..=4);
        let categories: Vec<String> = (0..n_cats).map(|i| format!("cat{i}")).collect();
        let mut weights = CategoryWeights::uniform(categories.clone());
        for w in weights.weights.iter_mut() {
            *w = rng.gen_range(-1.0..1.0);
        }
        let mut head = AdmissionClassifierHead {
            input_dim: dim,
            hidden,
            w1: (0..hidden * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            b1: (0..hidden).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            w2: (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            b2: rng.gen_range(-0.5..0.5),
        };
        // Random subset of present categories (at least one).
        let mut present = BTreeMap::new();
        for cat in &categories {
            if present.is_empty() || rng.gen_bool(0.7) {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                present.insert(cat.clone(), v);
            }
        }
        let set = CategoryEmbeddingSet {
            admission_id: format!("adm{case}"),
            categories: present,
            dim,
        };
        let label: bool = rng.gen();

        let (_, grad) = joint_loss_grad(&weights, &head, &set, label).unwrap();

        for i in 0..weights.weights.len() {
            let numeric = {
                let orig = weights.weights[i];
                weights.weights[i] = orig + FD_STEP;
                let up = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
                weights.weights[i] = orig - FD_STEP;
                let down = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
                weights.weights[i] = orig;
                (up - down) / (2.0 * FD_STEP)
            };
            assert_close(grad.weights[i], numeric, &format!("case {case} weight[{i}]"));
        }
        for i in 0..head.w1.len() {
            let orig = head.w1[i];
            head.w1[i] = orig + FD_STEP;
            let up = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
            head.w1[i] = orig - FD_STEP;
            let down = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
            head.w1[i] = orig;
            assert_close(
                grad.head.w1[i],
                (up - down) / (2.0 * FD_STEP),
                &format!("case {case} w1[{i}]"),
            );
        }
        for i in 0..head.b1.len() {
            let orig = head.b1[i];
            head.b1[i] = orig + FD_STEP;
            let up = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
            head.b1[i] = orig - FD_STEP;
            let down = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
            head.b1[i] = orig;
            assert_close(
                grad.head.b1[i],
                (up - down) / (2.0 * FD_STEP),
                &format!("case {case} b1[{i}]"),
            );
        }
        for i in 0..head.w2.len() {
            let orig = head.w2[i];
            head.w2[i] = orig + FD_STEP;
            let up = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
            head.w2[i] = orig - FD_STEP;
            let down = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
            head.w2[i] = orig;
            assert_close(
                grad.head.w2[i],
                (up - down) / (2.0 * FD_STEP),
                &format!("case {case} w2[{i}]"),
            );
        }
        {
            let orig = head.b2;
            head.b2 = orig + FD_STEP;
            let up = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
            head.b2 = orig - FD_STEP;
            let down = joint_loss_grad(&weights, &head, &set, label).unwrap().0;
            head.b2 = orig;
            assert_close(
                grad.head.b2,
                (up - down) / (2.0 * FD_STEP),
                &format!("case {case} b2"),
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "took {secs:.1}s, budget 30s");
    pass(
        "gradient oracle (weighting)",
        format!("100 instances, all components within rel {FD_REL_TOL:.0e}, {secs:.2}s"),
    );
}

// ---------------------------------------------------------------------------
// AUC oracle equivalence: rank-based implementation vs an independent
// trapezoidal ROC integration, plus the frozen hand-checked fixtures.
// ---------------------------------------------------------------------------

/// Independent reference: sweep thresholds over tied score groups and
/// integrate the ROC curve with the trapezoid rule.
fn trapezoidal_roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let n = labels.len() as f64 - p;
    let (mut tp, mut fp, mut prev_tp, mut prev_fp, mut area) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let cut = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == cut {
            if labels[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - prev_fp) / n * (tp + prev_tp) / (2.0 * p);
        prev_tp = tp;
        prev_fp = fp;
    }
    area
}

#[test]
fn acceptance_auc_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut max_diff: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        if labels.iter().all(|&l| l) {
            labels[0] = false;
        }
        if labels.iter().all(|&l| !l) {
            labels[0] = true;
        }
        // Half the sets are quantized so tied scores are common.
        let quantize = rng.gen_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if quantize {
                    rng.gen_range(0..8) as f64 / 8.0
                } else {
                    rng.gen_range(0.0..1.0)
                }
            })
            .collect();
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let ranked = roc_auc(&set).unwrap();
        let integrated = trapezoidal_roc_auc(&scores, &labels);
        let diff = (ranked - integrated).abs();
        max_diff = max_diff.max(diff);
        assert!(
            diff < 1e-9,
            "rank {ranked} vs trapezoid {integrated} (diff {diff:.2e})"
        );
    }

    // Frozen hand-checked fixtures.
    let fix = |scores: &[f64], labels: &[u8]| {
        ScoredSet::new(
            scores.to_vec(),
            labels.iter().map(|&l| l == 1).collect(),
        )
        .unwrap()
    };
    assert_eq!(roc_auc(&fix(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
    assert_eq!(roc_auc(&fix(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1])).unwrap(), 0.0);
    assert_eq!(roc_auc(&fix(&[0.9, 0.4, 0.6, 0.1], &[1, 0, 0, 1])).unwrap(), 0.5);
    let ap = pr_auc(&fix(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0])).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-12, "AP fixture: {ap}");

    pass(
        "auc oracle equivalence",
        format!("1000 scored sets, max |rank − trapezoid| = {max_diff:.2e}; fixtures exact"),
    );
}

// ---------------------------------------------------------------------------
// Ablation ordering on the shipped default config: the refined + weighted
// pipeline beats the mean-pooled baseline, and neither single stage hurts.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_ablation_ordering_on_shipped_config() {
    let start = Instant::now();
    let config = PipelineConfig::default_synthetic();
    let report = pipeline::run_ablation(&config).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let baseline = report.mean_auc(Setting::Baseline);
    let metric = report.mean_auc(Setting::Metric);
    let weight = report.mean_auc(Setting::Weight);
    let full = report.mean_auc(Setting::Full);

    assert!(
        full - baseline >= 0.05,
        "full {full:.4} − baseline {baseline:.4} = {:.4} < 0.05",
        full - baseline
    );
    assert!(metric >= baseline, "metric {metric:.4} < baseline {baseline:.4}");
    assert!(weight >= baseline, "weight {weight:.4} < baseline {baseline:.4}");
    assert!(
        full >= metric.max(weight) - 0.01,
        "full {full:.4} < max(metric {metric:.4}, weight {weight:.4}) − 0.01"
    );
    assert!(secs < 300.0, "ablation took {secs:.1}s, budget 300s");
    pass(
        "ablation ordering",
        format!(
            "baseline {baseline:.4} | metric {metric:.4} | weight {weight:.4} | full {full:.4} \
             over seeds {:?} in {secs:.1}s",
            report.seeds
        ),
    );
}

// ---------------------------------------------------------------------------
// Siamese geometric effect on a separable two-cluster category.
// ---------------------------------------------------------------------------

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn acceptance_siamese_geometric_effect() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut notes: Vec<(Vec<f64>, bool)> = Vec::new();
    for &label in &[true, false] {
        let center = if label { 1.0 } else { -1.0 };
        for _ in 0..20 {
            let v: Vec<f64> = (0..4).map(|_| center + rng.gen_range(-0.2..0.2)).collect();
            notes.push((v, label));
        }
    }
    let mut by_cat = NotesByCategory::new();
    by_cat.insert("A".into(), notes.clone());
    let params = SiameseTrainParams {
        epochs: 30,
        seed: 9,
        ..SiameseTrainParams::default()
    };
    let bundle = train_refiners(&by_cat, &params).unwrap();
    let net = bundle.network("A").unwrap();

    let mean_intra = |refine: bool| {
        let (mut total, mut count) = (0.0, 0usize);
        for i in 0..notes.len() {
            for j in i + 1..notes.len() {
                if notes[i].1 == notes[j].1 {
                    total += if refine {
                        euclidean(
                            &net.forward(&notes[i].0).unwrap(),
                            &net.forward(&notes[j].0).unwrap(),
                        )
                    } else {
                        euclidean(&notes[i].0, &notes[j].0)
                    };
                    count += 1;
                }
            }
        }
        total / count as f64
    };
    let pre = mean_intra(false);
    let post = mean_intra(true);
    assert!(post < pre, "intra-class distance {post:.4} not below {pre:.4}");

    let (mut far, mut total) = (0usize, 0usize);
    for i in 0..notes.len() {
        for j in i + 1..notes.len() {
            if notes[i].1 != notes[j].1 {
                total += 1;
                if pair_distance(net, &notes[i].0, &notes[j].0).unwrap() >= params.margin {
                    far += 1;
                }
            }
        }
    }
    let frac = far as f64 / total as f64;
    assert!(frac >= 0.9, "only {frac:.3} of differing pairs at margin");
    pass(
        "siamese geometric effect",
        format!("intra {pre:.4} → {post:.4}; {frac:.3} of differing pairs ≥ margin"),
    );
}

// ---------------------------------------------------------------------------
// Determinism: identical config, identical bytes on disk.
// ---------------------------------------------------------------------------

fn small_config() -> PipelineConfig {
    let mut config = PipelineConfig::default_synthetic();
    let synth = config.data.synthetic.as_mut().unwrap();
    synth.n_admissions = 80;
    config.word2vec.dim = 16;
    config.word2vec.epochs = 3;
    config.siamese.epochs = 5;
    config.weighting.epochs = 50;
    config.classifiers.logreg_epochs = 100;
    config.classifiers.mlp_epochs = 100;
    config.run.seeds = vec![1, 2];
    config
}

#[test]
fn acceptance_determinism_byte_identical_reports() {
    let config = small_config();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    pipeline::execute_ablation(&config, dir_a.path()).unwrap();
    pipeline::execute_ablation(&config, dir_b.path()).unwrap();
    let report_a = std::fs::read(dir_a.path().join("report.json")).unwrap();
    let report_b = std::fs::read(dir_b.path().join("report.json")).unwrap();
    assert_eq!(report_a, report_b, "report.json differs between identical runs");
    let csv_a = std::fs::read(dir_a.path().join("ablation.csv")).unwrap();
    let csv_b = std::fs::read(dir_b.path().join("ablation.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "ablation.csv differs between identical runs");
    pass(
        "determinism",
        format!("two runs, report.json byte-identical ({} bytes)", report_a.len()),
    );
}

// ---------------------------------------------------------------------------
// Leakage guard: a test-split note in vocabulary building must abort with a
// stage-labeled error.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_leakage_guard_negative() {
    let synth = SyntheticConfig {
        n_admissions: 40,
        positive_fraction: 0.5,
        categories: vec![CategorySpec {
            name: "Physician".into(),
            presence_probability: 1.0,
            signal_strength: 0.5,
        }],
        notes_per_category: (1, 2),
        tokens_per_note: (10, 20),
        shared_tokens: 50,
        label_tokens_per_category: 10,
        seed: 3,
    };
    let (notes, admissions) = corpus::generate_synthetic(&synth).unwrap();
    let split = corpus::balance_and_split(&admissions, 0.25, 5).unwrap();
    let guard = LeakageGuard::new(&split);

    let tokenized: Vec<TokenizedNote> = notes
        .iter()
        .map(|n| TokenizedNote::from_text(&n.admission_id, &n.category, &n.text))
        .collect();
    // Train notes plus one smuggled test-split note.
    let leaked_id = split.test.iter().next().unwrap().clone();
    let polluted: Vec<&TokenizedNote> = tokenized
        .iter()
        .filter(|n| split.is_train(&n.admission_id) || n.admission_id == leaked_id)
        .collect();
    let err = build_vocabulary_guarded(&polluted, 1, &guard).unwrap_err();
    match &err {
        PipelineError::Leakage { stage, id } => {
            assert_eq!(*stage, "vocabulary");
            assert_eq!(*id, leaked_id);
        }
        other => panic!("expected leakage error, got {other:?}"),
    }
    assert!(err.to_string().contains("vocabulary"), "error not stage-labeled: {err}");
    pass(
        "leakage guard",
        format!("test admission {leaked_id} rejected at stage \"vocabulary\""),
    );
}

// ---------------------------------------------------------------------------
// Word2Vec sanity: co-occurring tokens end up closer than non-co-occurring
// ones for at least 4 of 5 seeds on the adjacency micro-corpus.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_word2vec_adjacency_sanity() {
    // a and b share the context x; c only ever appears beside y. Skip-gram
    // drives input-vector similarity through shared contexts, so cos(a, b)
    // should dominate cos(a, c).
    let mut notes = Vec::new();
    for i in 0..30 {
        notes.push(TokenizedNote::from_text(&format!("adm{i}a"), "cat", "a x"));
        notes.push(TokenizedNote::from_text(&format!("adm{i}b"), "cat", "x b"));
        notes.push(TokenizedNote::from_text(&format!("adm{i}c"), "cat", "c y"));
    }
    let vocab = build_vocabulary(&notes, 1).unwrap();
    let ia = vocab.index("a").unwrap();
    let ib = vocab.index("b").unwrap();
    let ic = vocab.index("c").unwrap();

    let mut wins = 0;
    for seed in 1..=5u64 {
        let params = Word2VecParams {
            dim: 8,
            window: 2,
            negatives: 3,
            epochs: 60,
            learning_rate: 0.05,
            subsample_threshold: 0.0,
            seed,
        };
        let emb = train_word2vec(&notes, &vocab, &params).unwrap();
        let cos_ab = embed::cosine(emb.input_vector(ia), emb.input_vector(ib));
        let cos_ac = embed::cosine(emb.input_vector(ia), emb.input_vector(ic));
        if cos_ab > cos_ac {
            wins += 1;
        }
    }
    assert!(wins >= 4, "co-occurring pair closer on only {wins}/5 seeds");
    pass(
        "word2vec sanity",
        format!("cosine(a,b) > cosine(a,c) on {wins}/5 seeds"),
    );
}
