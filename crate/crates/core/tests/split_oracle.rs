mod common;

use mode_forest::{best_split, gini_impurity, MatrixView};
use proptest::prelude::*;

/// Random split-search instance.
#[derive(Debug, Clone)]
struct Instance {
    n_cols: usize,
    x: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    rows: Vec<usize>,
    features: Vec<usize>,
    min_leaf: usize,
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=50, 1usize..=6, 2usize..=4, 1usize..=3).prop_flat_map(|(n, p, k, min_leaf)| {
        // Mostly coarse values so that ties and repeated values are common.
        let value = prop_oneof![
            3 => (0u8..6).prop_map(|v| v as f64 * 0.5),
            1 => -50.0f64..50.0,
        ];
        (
            prop::collection::vec(value, n * p),
            prop::collection::vec(0..k, n),
            prop::collection::vec(0..n, 1..=n),
            prop::sample::subsequence((0..p).collect::<Vec<_>>(), 1..=p),
        )
            .prop_map(move |(x, labels, rows, features)| Instance {
                n_cols: p,
                x,
                labels,
                n_classes: k,
                rows,
                features,
                min_leaf,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn best_split_matches_exhaustive_enumeration(inst in instance()) {
        let view = MatrixView::new(&inst.x, inst.n_cols).unwrap();
        let got = best_split(view, &inst.labels, inst.n_classes, &inst.rows, &inst.features, inst.min_leaf)
            .map(|c| (c.feature_index, c.threshold, c.impurity_decrease));
        let want = common::brute_force_split(
            &inst.x, inst.n_cols, &inst.labels, inst.n_classes, &inst.rows, &inst.features, inst.min_leaf,
        );
        prop_assert_eq!(got, want);
    }

    #[test]
    fn gini_is_invariant_to_permutation_and_scaling(
        counts in prop::collection::vec(0u32..500, 2..6).prop_filter("non-empty", |c| c.iter().any(|&v| v > 0)),
        factor in 1u32..50,
    ) {
        let g = gini_impurity(&counts).unwrap();
        let mut reversed = counts.clone();
        reversed.reverse();
        let mut rotated = counts.clone();
        rotated.rotate_left(1);
        let scaled: Vec<u32> = counts.iter().map(|c| c * factor).collect();
        prop_assert!((gini_impurity(&reversed).unwrap() - g).abs() < 1e-12);
        prop_assert!((gini_impurity(&rotated).unwrap() - g).abs() < 1e-12);
        prop_assert!((gini_impurity(&scaled).unwrap() - g).abs() < 1e-12);
        prop_assert!((0.0..1.0).contains(&g));
    }
}

#[test]
fn gini_reference_values() {
    assert_eq!(gini_impurity(&[10, 0]).unwrap(), 0.0);
    assert_eq!(gini_impurity(&[5, 5]).unwrap(), 0.5);
    // 1 - (280² + 261² + 259² + 2199²) / 2999² = 3944798 / 8994001
    let g = gini_impurity(&[280, 261, 259, 2199]).unwrap();
    assert!((g - 3_944_798.0 / 8_994_001.0).abs() < 1e-12);
    assert!(gini_impurity(&[0, 0]).is_err());
}
