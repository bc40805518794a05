//! Property tests for path construction: the monotonicity contract, the
//! straight-line identity, upsampling, and greedy local optimality.

use digrad_core::knn::{build_knn_index, DistanceMetric};
use digrad_core::paths::{
    anchor_greedy, build_path, monotonize, upsample, validate_path, InterpolationPath, PathConfig,
    PathStrategy,
};
use digrad_core::vocab::{EmbeddingTable, PAD_ID};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn arb_table(max_vocab: usize, max_dim: usize) -> impl Strategy<Value = EmbeddingTable> {
    (4..max_vocab, 1..max_dim).prop_flat_map(|(v, d)| {
        proptest::collection::vec(-2.0f64..2.0, v * d).prop_map(move |mut flat| {
            for x in flat.iter_mut().take(d) {
                *x = 0.0; // pad row
            }
            EmbeddingTable::new(Array2::from_shape_vec((v, d), flat).unwrap()).unwrap()
        })
    })
}

fn arb_strategy() -> impl Strategy<Value = PathStrategy> {
    prop::sample::select(PathStrategy::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn every_strategy_produces_monotonic_paths(
        table in arb_table(24, 6),
        strategy in arb_strategy(),
        word_pick in 0usize..1000,
        k in 1usize..8,
        m in 1usize..20,
        f in 0usize..3,
        seed in any::<u64>(),
    ) {
        let index = build_knn_index(&table, k, DistanceMetric::Euclidean);
        let word = 1 + word_pick % (table.len() - 1);
        let cfg = PathConfig { steps: m, strategy, upsample_factor: f, seed };
        let path = build_path(word, &table, Some(&index), table.row(PAD_ID), &cfg).unwrap();
        let violations = validate_path(&path);
        prop_assert!(violations.is_empty(), "violations: {violations:?}");
        prop_assert_eq!(path.baseline().to_vec(), table.row(PAD_ID).to_vec());
        prop_assert_eq!(path.input().to_vec(), table.row(word).to_vec());
        // fixed shape: 2^f * m + 1 points regardless of strategy or stalls
        prop_assert_eq!(path.len(), (1usize << f) * m + 1);
    }

    #[test]
    fn upsampling_preserves_monotonicity_and_geometry(
        table in arb_table(16, 4),
        strategy in arb_strategy(),
        word_pick in 0usize..1000,
        m in 1usize..12,
        f in 1usize..4,
        seed in any::<u64>(),
    ) {
        let index = build_knn_index(&table, 4, DistanceMetric::Euclidean);
        let word = 1 + word_pick % (table.len() - 1);
        let cfg = PathConfig { steps: m, strategy, upsample_factor: 0, seed };
        let base = build_path(word, &table, Some(&index), table.row(PAD_ID), &cfg).unwrap();
        prop_assert!(validate_path(&base).is_empty());
        let dense = upsample(&base, f);
        prop_assert!(validate_path(&dense).is_empty());
        let mut expected_len = base.len();
        for _ in 0..f {
            expected_len = 2 * expected_len - 1;
        }
        prop_assert_eq!(dense.len(), expected_len);
        prop_assert_eq!(dense.baseline().to_vec(), base.baseline().to_vec());
        prop_assert_eq!(dense.input().to_vec(), base.input().to_vec());
    }

    #[test]
    fn straight_line_matches_the_interpolation_formula_exactly(
        (input, baseline) in (1usize..6).prop_flat_map(|d| {
            (
                proptest::collection::vec(-3.0f64..3.0, d),
                proptest::collection::vec(-3.0f64..3.0, d),
            )
        }),
        m in 1usize..40,
    ) {
        let input = Array1::from_vec(input);
        let baseline = Array1::from_vec(baseline);
        let path = InterpolationPath::linear(0, input.view(), baseline.view(), m).unwrap();
        prop_assert_eq!(path.len(), m + 1);
        for (k, point) in path.points.iter().enumerate() {
            if k == 0 {
                prop_assert_eq!(point, &baseline);
            } else if k == m {
                prop_assert_eq!(point, &input);
            } else {
                for i in 0..input.len() {
                    let formula = baseline[i] + (k as f64 / m as f64) * (input[i] - baseline[i]);
                    prop_assert_eq!(point[i], formula);
                }
            }
        }
        prop_assert!(validate_path(&path).is_empty());
    }

    #[test]
    fn greedy_choice_is_locally_optimal(
        table in arb_table(20, 5),
        word_pick in 0usize..1000,
        m in 2usize..12,
    ) {
        let index = build_knn_index(&table, 6, DistanceMetric::Euclidean);
        let word = 1 + word_pick % (table.len() - 1);
        let baseline = table.row(PAD_ID);
        let current = table.row(word);
        let candidates: Vec<_> = index
            .neighbors(word)
            .iter()
            .map(|&id| (id, table.row(id)))
            .collect();
        let (chosen, anchor, projected) =
            anchor_greedy(&candidates, current, baseline, m).unwrap();
        let chosen_dist: f64 = anchor
            .iter()
            .zip(projected.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // re-enumerate: no other neighbor beats the chosen distance
        for &(id, cand) in &candidates {
            let proj = monotonize(cand, current, baseline, m).unwrap();
            let dist: f64 = cand
                .iter()
                .zip(proj.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            prop_assert!(
                chosen_dist <= dist || (chosen_dist == dist && chosen <= id),
                "neighbor {id} at {dist} beats chosen {chosen} at {chosen_dist}"
            );
        }
    }

    #[test]
    fn random_strategies_reproduce_under_a_fixed_seed(
        table in arb_table(16, 4),
        word_pick in 0usize..1000,
        m in 1usize..10,
        seed in any::<u64>(),
    ) {
        let index = build_knn_index(&table, 4, DistanceMetric::Euclidean);
        let word = 1 + word_pick % (table.len() - 1);
        for strategy in [PathStrategy::DigRandomAnchor, PathStrategy::DigRandomNeighbor] {
            let cfg = PathConfig { steps: m, strategy, upsample_factor: 0, seed };
            let a = build_path(word, &table, Some(&index), table.row(PAD_ID), &cfg).unwrap();
            let b = build_path(word, &table, Some(&index), table.row(PAD_ID), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
