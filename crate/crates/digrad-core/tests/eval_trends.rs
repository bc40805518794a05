//! Qualitative metric behavior on a trained toy classifier.

use digrad_core::attribution::Method;
use digrad_core::dataset::toy_corpus;
use digrad_core::eval::{comprehensiveness, evaluate_dataset, rank_topk, EvalOptions};
use digrad_core::knn::{build_knn_index, DistanceMetric};
use digrad_core::model::{train, GradientOracle, TrainConfig};
use digrad_core::paths::PathConfig;
use digrad_core::vocab::Vocab;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn comprehensiveness_grows_with_k_and_beats_random_rankings() {
    let data = toy_corpus(240, 21);
    let outcome = train(
        &data,
        &TrainConfig {
            epochs: 25,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(outcome.report.train_accuracy >= 0.95);
    let model = outcome.classifier;
    let vocab = outcome.vocab;
    let table = model.embedding().clone();
    let index = build_knn_index(&table, 500, DistanceMetric::Euclidean);

    let sentences: Vec<Vec<usize>> = toy_corpus(80, 90)
        .iter()
        .map(|(text, _)| vocab.tokenize(text))
        .collect();

    let out = evaluate_dataset(
        &model,
        &table,
        Some(&index),
        &sentences,
        &[Method::Ig, Method::DigGreedy],
        &EvalOptions {
            path: PathConfig {
                steps: 10,
                seed: 5,
                ..PathConfig::default()
            },
            ..EvalOptions::default()
        },
        &[5.0, 10.0, 20.0, 50.0],
    )
    .unwrap();

    // comprehensiveness is monotone in k for each method
    for method in [Method::Ig, Method::DigGreedy] {
        let comps: Vec<f64> = out
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.comprehensiveness.unwrap())
            .collect();
        assert_eq!(comps.len(), 4);
        for pair in comps.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-9,
                "{method}: comprehensiveness not monotone in k: {comps:?}"
            );
        }
    }

    // a seeded random ranking is a sanity floor at k=20%
    let ig_comp = out
        .rows
        .iter()
        .find(|r| r.method == Method::Ig && r.k_percent == 20.0)
        .unwrap()
        .comprehensiveness
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut random_total = 0.0;
    for tokens in &sentences {
        let scores: Vec<f64> = tokens.iter().map(|_| rng.random_range(0.0..1.0)).collect();
        let special: Vec<bool> = tokens.iter().map(|&t| Vocab::is_special(t)).collect();
        let selection = rank_topk(&scores, &special, 20.0);
        random_total += comprehensiveness(&model, &table, tokens, &selection).unwrap();
    }
    let random_comp = random_total / sentences.len() as f64;
    assert!(
        random_comp < ig_comp,
        "random ranking ({random_comp}) must score below attribution ({ig_comp})"
    );
}

#[test]
fn identical_attributions_give_identical_rows() {
    let data = toy_corpus(60, 33);
    let outcome = train(
        &data,
        &TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let model = outcome.classifier;
    let table = model.embedding().clone();
    let sentences: Vec<Vec<usize>> = toy_corpus(10, 34)
        .iter()
        .map(|(text, _)| outcome.vocab.tokenize(text))
        .collect();
    // the same method listed twice is two identical runs
    let out = evaluate_dataset(
        &model,
        &table,
        None,
        &sentences,
        &[Method::GradXInput, Method::GradXInput],
        &EvalOptions::default(),
        &[20.0],
    )
    .unwrap();
    assert_eq!(out.rows.len(), 2);
    assert_eq!(out.rows[0].log_odds, out.rows[1].log_odds);
    assert_eq!(out.rows[0].sufficiency, out.rows[1].sufficiency);
    assert_eq!(model.dim(), table.dim());
}
