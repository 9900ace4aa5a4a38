//! Reference implementations used by the integration tests. They follow the
//! textbook definitions directly and share no code with the library's search
//! and traversal routines.
#![allow(dead_code)]

use mode_forest::data::{FeatureKind, FeatureSpec};
use mode_forest::tree::Node;
use mode_forest::{FeatureSchema, ForestModel, Tree};

/// `1 - sum p_i^2` evaluated term by term in class order.
pub fn gini(counts: &[u32]) -> f64 {
    let n: u32 = counts.iter().sum();
    let mut s = 0.0;
    for &c in counts {
        let p = c as f64 / n as f64;
        s += p * p;
    }
    1.0 - s
}

/// Tries every midpoint between consecutive distinct node values for every
/// listed feature and keeps the largest decrease. Candidates within 1e-12
/// count as ties, resolved towards the lowest feature, then the lowest
/// threshold.
pub fn brute_force_split(
    x: &[f64],
    n_cols: usize,
    labels: &[usize],
    n_classes: usize,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let mut feats = features.to_vec();
    feats.sort_unstable();
    let mut parent = vec![0u32; n_classes];
    for &r in rows {
        parent[labels[r]] += 1;
    }
    let n = rows.len() as f64;
    let g_parent = gini(&parent);
    let mut best: Option<(usize, f64, f64)> = None;
    for &f in &feats {
        let mut values: Vec<f64> = rows.iter().map(|&r| x[r * n_cols + f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let mut t = (w[0] + w[1]) / 2.0;
            if t <= w[0] {
                t = w[1];
            }
            let mut left = vec![0u32; n_classes];
            let mut right = vec![0u32; n_classes];
            for &r in rows {
                if x[r * n_cols + f] < t {
                    left[labels[r]] += 1;
                } else {
                    right[labels[r]] += 1;
                }
            }
            let nl: u32 = left.iter().sum();
            let nr: u32 = right.iter().sum();
            if (nl as usize) < min_leaf || (nr as usize) < min_leaf {
                continue;
            }
            let d = (g_parent - (nl as f64 / n) * gini(&left) - (nr as f64 / n) * gini(&right)).max(0.0);
            if d <= 1e-12 {
                continue;
            }
            match best {
                Some((_, _, bd)) if d <= bd + 1e-12 => {}
                _ => best = Some((f, t, d)),
            }
        }
    }
    best
}

fn first_max(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Class predicted by one tree, walking the node list by hand.
pub fn tree_vote(tree: &Tree, row: &[f64]) -> usize {
    let nodes = tree.nodes();
    let mut i = 0;
    loop {
        match &nodes[i] {
            Node::Split { feature, threshold, left, right, .. } => {
                i = if row[*feature] < *threshold { *left } else { *right };
            }
            Node::Leaf { counts } => return first_max(counts),
        }
    }
}

/// Majority vote over trees, lowest class index on ties.
pub fn tally(model: &ForestModel, row: &[f64]) -> usize {
    let mut votes = vec![0u32; model.n_classes];
    for t in &model.trees {
        votes[tree_vote(t, row)] += 1;
    }
    first_max(&votes)
}

/// Partial dependence by substituting each grid value into every row.
pub fn pdp_by_substitution(
    model: &ForestModel,
    rows: &[Vec<f64>],
    feature: usize,
    grid: &[f64],
    class: usize,
) -> Vec<f64> {
    grid.iter()
        .map(|&g| {
            let mut hits = 0u64;
            for r in rows {
                let mut row = r.clone();
                row[feature] = g;
                hits += model.trees.iter().filter(|t| tree_vote(t, &row) == class).count() as u64;
            }
            hits as f64 / (model.trees.len() * rows.len()) as f64
        })
        .collect()
}

/// Schema of `p` unconstrained continuous columns `x0, x1, ...`.
pub fn plain_schema(p: usize) -> FeatureSchema {
    FeatureSchema::new(
        (0..p)
            .map(|j| FeatureSpec { name: format!("x{j}"), kind: FeatureKind::Continuous, unit: String::new() })
            .collect(),
    )
    .unwrap()
}

/// A valid canonical-schema row that varies only in distance and age.
pub fn canonical_row(distance_km: f64, age: f64) -> Vec<f64> {
    vec![
        distance_km, 1.0, // same_municipality
        1.0, 0.0, 0.0, // urbanization
        0.0, 1.0, 0.0, 0.0, 0.0, // public transport service
        age, 0.0, 1.0, 0.0, 0.0, // age, female, swiss, french, italian
        4.0, 1.0, 2.0, 1.0, 0.0, // household, cars, bikes, owner, rain
    ]
}

/// Canonical dataset from `(mode, distance)` pairs.
pub fn canonical_dataset(rows: &[(mode_forest::TravelMode, f64)]) -> mode_forest::Dataset {
    let mut values = Vec::new();
    for &(_, d) in rows {
        values.extend(canonical_row(d, 9.0));
    }
    mode_forest::Dataset::new(FeatureSchema::canonical(), values, rows.iter().map(|r| r.0).collect()).unwrap()
}
