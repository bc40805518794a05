//! The neighbor index against an independently written brute-force oracle.

use digrad_core::knn::{build_knn_index, DistanceMetric};
use digrad_core::vocab::{EmbeddingTable, PAD_ID};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_table(vocab: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Array2::zeros((vocab, dim));
    for i in 1..vocab {
        for j in 0..dim {
            vectors[[i, j]] = rng.random_range(-1.0..1.0);
        }
    }
    EmbeddingTable::new(vectors).unwrap()
}

fn oracle_distance(metric: DistanceMetric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        DistanceMetric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt(),
        DistanceMetric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
    }
}

/// Exactness: every vocabulary token outside a neighbor list is at least as
/// far as the last list entry, and the list itself is sorted by distance.
fn check_exactness(table: &EmbeddingTable, k: usize, metric: DistanceMetric) {
    let index = build_knn_index(table, k, metric);
    for id in 1..table.len() {
        let own: Vec<f64> = table.row(id).to_vec();
        let list = index.neighbors(id);
        assert_eq!(list.len(), k.min(table.len() - 2), "token {id}");
        let dist_of = |j: usize| oracle_distance(metric, &own, &table.row(j).to_vec());

        let mut prev = f64::NEG_INFINITY;
        for &j in list {
            assert_ne!(j, id);
            assert_ne!(j, PAD_ID);
            let d = dist_of(j);
            assert!(d >= prev, "distances must be non-decreasing");
            prev = d;
        }
        let worst = list.last().map(|&j| dist_of(j)).unwrap_or(f64::INFINITY);
        for other in 1..table.len() {
            if other == id || list.contains(&other) {
                continue;
            }
            assert!(
                dist_of(other) >= worst,
                "token {other} should have been a neighbor of {id}"
            );
        }
    }
}

#[test]
fn exactness_on_random_vocabularies() {
    for (vocab, dim, k, seed) in [
        (10, 3, 2, 1u64),
        (50, 8, 5, 2),
        (200, 4, 17, 3),
        (400, 16, 25, 4),
    ] {
        check_exactness(&random_table(vocab, dim, seed), k, DistanceMetric::Euclidean);
    }
    check_exactness(&random_table(60, 6, 7), 9, DistanceMetric::Cosine);
}

#[test]
fn exactness_holds_on_a_larger_vocabulary() {
    check_exactness(&random_table(2000, 8, 11), 12, DistanceMetric::Euclidean);
}

#[test]
fn construction_is_deterministic_across_thread_counts() {
    let table = random_table(300, 8, 13);
    let baseline = build_knn_index(&table, 10, DistanceMetric::Euclidean);
    for threads in [1usize, 2, 7] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let index = pool.install(|| build_knn_index(&table, 10, DistanceMetric::Euclidean));
        assert_eq!(index, baseline, "thread count {threads} changed the index");
    }
}
