//! CART classification trees grown by exhaustive Gini split search.

mod split;

pub use split::{best_split, gini_impurity, RankedFeatures, SplitCandidate};
pub(crate) use split::Splitter;

use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::MatrixView;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Minimum number of training rows in a leaf.
    pub min_leaf_size: usize,
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    /// Candidate features drawn per node; `None` uses every feature.
    pub mtry: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { min_leaf_size: 1, max_depth: None, mtry: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `value < threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Node size times the impurity decrease of the split.
        gini_decrease: f64,
    },
    Leaf { counts: Vec<u32> },
}

/// Fitted tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    n_features: usize,
    n_classes: usize,
    nodes: Vec<Node>,
}

/// Index of the largest count; ties go to the lowest index.
#[inline]
pub(crate) fn argmax(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    if n_classes == 0 || n_classes > u16::MAX as usize {
        return Err(Error::invalid(format!("unsupported class count {n_classes}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!("label {l} out of range for {n_classes} classes")));
    }
    Ok(())
}

impl Tree {
    /// Grows a tree on every row of `x`.
    pub fn grow(
        x: MatrixView<'_>,
        labels: &[usize],
        n_classes: usize,
        params: &TreeParams,
        rng: &mut StreamRng,
    ) -> Result<Tree> {
        if x.n_rows() == 0 || labels.len() != x.n_rows() {
            return Err(Error::invalid("tree needs at least one row and one label per row"));
        }
        check_labels(labels, n_classes)?;
        let ranked = RankedFeatures::new(x);
        Self::grow_on(&ranked, labels, n_classes, (0..x.n_rows()).collect(), params, rng)
    }

    /// Grows a tree on a row sample (repeats allowed) of a ranked matrix.
    pub(crate) fn grow_on(
        ranked: &RankedFeatures,
        labels: &[usize],
        n_classes: usize,
        mut rows: Vec<usize>,
        params: &TreeParams,
        rng: &mut StreamRng,
    ) -> Result<Tree> {
        let p = ranked.n_features();
        let mtry = params.mtry.unwrap_or(p);
        if mtry == 0 || mtry > p {
            return Err(Error::invalid(format!("mtry {mtry} outside 1..={p}")));
        }
        let min_leaf = params.min_leaf_size.max(1);
        let max_depth = params.max_depth.unwrap_or(usize::MAX);
        let mut splitter = Splitter::new(ranked, labels, n_classes, min_leaf);
        let mut nodes = vec![Node::Leaf { counts: Vec::new() }];
        let mut stack = vec![(0usize, 0usize, rows.len(), 0usize)];
        let mut features = Vec::with_capacity(mtry);

        while let Some((slot, start, end, depth)) = stack.pop() {
            let node_rows = &mut rows[start..end];
            let mut counts = vec![0u32; n_classes];
            for &r in node_rows.iter() {
                counts[labels[r]] += 1;
            }
            let n = node_rows.len();
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            if pure || n < 2 * min_leaf || depth >= max_depth {
                nodes[slot] = Node::Leaf { counts };
                continue;
            }
            features.clear();
            features.extend(sample(rng, p, mtry));
            features.sort_unstable();
            let Some(split) = splitter.find(node_rows, &counts, &features) else {
                nodes[slot] = Node::Leaf { counts };
                continue;
            };

            let column = ranked.column(split.feature);
            let mut mid = 0;
            for i in 0..n {
                if column[node_rows[i]] <= split.left_max_code {
                    node_rows.swap(i, mid);
                    mid += 1;
                }
            }
            let left = nodes.len();
            nodes.push(Node::Leaf { counts: Vec::new() });
            nodes.push(Node::Leaf { counts: Vec::new() });
            nodes[slot] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right: left + 1,
                gini_decrease: n as f64 * split.decrease,
            };
            stack.push((left + 1, start + mid, end, depth + 1));
            stack.push((left, start, start + mid, depth + 1));
        }
        Ok(Tree { n_features: p, n_classes, nodes })
    }

    /// Builds a tree from explicit nodes, checking child links and shapes.
    pub fn from_nodes(n_features: usize, n_classes: usize, nodes: Vec<Node>) -> Result<Tree> {
        if nodes.is_empty() {
            return Err(Error::invalid("tree has no nodes"));
        }
        for (i, node) in nodes.iter().enumerate() {
            match node {
                Node::Split { feature, left, right, threshold, .. } => {
                    if *feature >= n_features || *left >= nodes.len() || *right >= nodes.len() {
                        return Err(Error::invalid(format!("node {i} has an out-of-range link")));
                    }
                    if *left <= i || *right <= i || !threshold.is_finite() {
                        return Err(Error::invalid(format!("node {i} is malformed")));
                    }
                }
                Node::Leaf { counts } => {
                    if counts.len() != n_classes {
                        return Err(Error::invalid(format!("leaf {i} has {} counts", counts.len())));
                    }
                }
            }
        }
        Ok(Tree { n_features, n_classes, nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Class counts of the leaf reached by `row`. No length check.
    #[inline]
    pub(crate) fn leaf_counts(&self, row: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if row[*feature] < *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, row: &[f64]) -> usize {
        argmax(self.leaf_counts(row))
    }

    /// Majority class of the leaf reached by `row`; leaf ties go to the lowest class id.
    pub fn predict_one(&self, row: &[f64]) -> Result<usize> {
        if row.len() != self.n_features {
            return Err(Error::invalid(format!(
                "row has {} values, tree expects {}",
                row.len(),
                self.n_features
            )));
        }
        Ok(self.predict_unchecked(row))
    }

    /// Adds, for every grid value `v`, one vote into `diff` (a difference
    /// array over `grid`) when `row` with `row[feature] = v` lands in a leaf
    /// predicting `class`. `grid` must be ascending.
    pub(crate) fn sweep_votes(&self, row: &[f64], feature: usize, grid: &[f64], class: usize, diff: &mut [i64]) {
        let mut stack = vec![(0usize, f64::NEG_INFINITY, f64::INFINITY)];
        while let Some((i, lo, hi)) = stack.pop() {
            match &self.nodes[i] {
                Node::Split { feature: f, threshold, left, right, .. } if *f == feature => {
                    if lo < *threshold {
                        stack.push((*left, lo, hi.min(*threshold)));
                    }
                    if hi > *threshold {
                        stack.push((*right, lo.max(*threshold), hi));
                    }
                }
                Node::Split { feature: f, threshold, left, right, .. } => {
                    stack.push((if row[*f] < *threshold { *left } else { *right }, lo, hi));
                }
                Node::Leaf { counts } => {
                    if argmax(counts) == class {
                        let start = grid.partition_point(|&g| g < lo);
                        let end = grid.partition_point(|&g| g < hi);
                        if start < end {
                            diff[start] += 1;
                            diff[end] -= 1;
                        }
                    }
                }
            }
        }
    }

    /// Sum of split decreases per feature.
    pub fn gini_decreases(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let Node::Split { feature, gini_decrease, .. } = node {
                out[*feature] += gini_decrease;
            }
        }
        out
    }

    /// Indented text rendering, one node per line.
    pub fn to_text(&self, feature_names: &[String]) -> String {
        let mut out = String::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, depth)) = stack.pop() {
            let pad = "  ".repeat(depth);
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right, gini_decrease } => {
                    let name = feature_names.get(*feature).map_or("?", String::as_str);
                    let _ = writeln!(out, "{pad}{name} < {threshold} (gini decrease {gini_decrease:.4})");
                    stack.push((*right, depth + 1));
                    stack.push((*left, depth + 1));
                }
                Node::Leaf { counts } => {
                    let _ = writeln!(out, "{pad}leaf {counts:?}");
                }
            }
        }
        out
    }

    /// Nested JSON rendering with feature names.
    pub fn to_json(&self, feature_names: &[String]) -> Value {
        fn go(tree: &Tree, i: usize, names: &[String]) -> Value {
            match &tree.nodes[i] {
                Node::Split { feature, threshold, left, right, gini_decrease } => json!({
                    "type": "split",
                    "feature": names.get(*feature).cloned().unwrap_or_default(),
                    "threshold": threshold,
                    "gini_decrease": gini_decrease,
                    "left": go(tree, *left, names),
                    "right": go(tree, *right, names),
                }),
                Node::Leaf { counts } => json!({ "type": "leaf", "counts": counts }),
            }
        }
        go(self, 0, feature_names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use crate::tree::split::gini;

    fn rng() -> StreamRng {
        substream(1, Domain::Tree, 0)
    }

    #[test]
    fn single_row_is_a_leaf() {
        let data = [1.0, 2.0];
        let x = MatrixView::new(&data, 2).unwrap();
        let t = Tree::grow(x, &[1], 2, &TreeParams::default(), &mut rng()).unwrap();
        assert_eq!(t.nodes(), &[Node::Leaf { counts: vec![0, 1] }]);
    }

    #[test]
    fn separable_toy_set_is_memorized() {
        let data = [0.0, 0.0, 1.0, 0.2, 0.3, 1.0, 1.0, 1.0, 0.6, 0.1, 0.8, 0.9];
        let labels = [0, 0, 1, 1, 0, 1];
        let x = MatrixView::new(&data, 2).unwrap();
        let t = Tree::grow(x, &labels, 2, &TreeParams::default(), &mut rng()).unwrap();
        for (r, &l) in x.rows().zip(&labels) {
            assert_eq!(t.predict_one(r).unwrap(), l);
        }
    }

    #[test]
    fn leaf_ties_go_to_lowest_class() {
        let t = Tree::from_nodes(1, 2, vec![Node::Leaf { counts: vec![3, 7] }]).unwrap();
        assert_eq!(t.predict_one(&[42.0]).unwrap(), 1);
        let t = Tree::from_nodes(1, 3, vec![Node::Leaf { counts: vec![2, 5, 5] }]).unwrap();
        assert_eq!(t.predict_one(&[0.0]).unwrap(), 1);
        assert!(t.predict_one(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn routing_uses_strict_less_than() {
        let t = Tree::from_nodes(
            1,
            2,
            vec![
                Node::Split { feature: 0, threshold: 2.0, left: 1, right: 2, gini_decrease: 1.0 },
                Node::Leaf { counts: vec![1, 0] },
                Node::Leaf { counts: vec![0, 1] },
            ],
        )
        .unwrap();
        assert_eq!(t.predict_one(&[1.0]).unwrap(), 0);
        assert_eq!(t.predict_one(&[2.0]).unwrap(), 1);
    }

    #[test]
    fn hand_traced_depth_two_tree() {
        // x0 < 0.5 ? (x1 < 0.5 ? A : B) : (x1 < 1.5 ? C : D), classes A=0 B=1 C=2 D=0.
        let leaf = |c: usize| {
            let mut counts = vec![0; 3];
            counts[c] = 4;
            Node::Leaf { counts }
        };
        let t = Tree::from_nodes(
            2,
            3,
            vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2, gini_decrease: 0.0 },
                Node::Split { feature: 1, threshold: 0.5, left: 3, right: 4, gini_decrease: 0.0 },
                Node::Split { feature: 1, threshold: 1.5, left: 5, right: 6, gini_decrease: 0.0 },
                leaf(0),
                leaf(1),
                leaf(2),
                leaf(0),
            ],
        )
        .unwrap();
        let grid = [([0.0, 0.0], 0), ([0.0, 1.0], 1), ([1.0, 1.0], 2), ([1.0, 2.0], 0)];
        for (row, expected) in grid {
            assert_eq!(t.predict_one(&row).unwrap(), expected, "{row:?}");
        }
        assert_eq!(t.depth(), 2);
    }

    #[test]
    fn decreases_per_feature() {
        let leaf = Tree::from_nodes(5, 2, vec![Node::Leaf { counts: vec![1, 1] }]).unwrap();
        assert_eq!(leaf.gini_decreases(), vec![0.0; 5]);
        let t = Tree::from_nodes(
            5,
            2,
            vec![
                Node::Split { feature: 3, threshold: 1.0, left: 1, right: 2, gini_decrease: 0.42 },
                Node::Leaf { counts: vec![1, 0] },
                Node::Leaf { counts: vec![0, 1] },
            ],
        )
        .unwrap();
        assert_eq!(t.gini_decreases(), vec![0.0, 0.0, 0.0, 0.42, 0.0]);
    }

    #[test]
    fn node_decreases_recompute_from_training_rows() {
        let data: Vec<f64> = (0..60).map(|i| ((i * 37) % 23) as f64).collect();
        let labels: Vec<usize> = (0..30).map(|i| (i * 5 % 7) % 3).collect();
        let x = MatrixView::new(&data, 2).unwrap();
        let t = Tree::grow(x, &labels, 3, &TreeParams::default(), &mut rng()).unwrap();
        // Route every row and recompute each split's decrease from the rows reaching it.
        let mut reach: Vec<Vec<usize>> = vec![Vec::new(); t.nodes().len()];
        for r in 0..x.n_rows() {
            let mut i = 0;
            loop {
                reach[i].push(r);
                match &t.nodes()[i] {
                    Node::Split { feature, threshold, left, right, .. } => {
                        i = if x.get(r, *feature) < *threshold { *left } else { *right };
                    }
                    Node::Leaf { .. } => break,
                }
            }
        }
        let counts = |rows: &[usize]| {
            let mut c = vec![0u32; 3];
            rows.iter().for_each(|&r| c[labels[r]] += 1);
            c
        };
        for (i, node) in t.nodes().iter().enumerate() {
            if let Node::Split { left, right, gini_decrease, .. } = node {
                let n = reach[i].len() as f64;
                let (nl, nr) = (reach[*left].len() as f64, reach[*right].len() as f64);
                let d = n * gini(&counts(&reach[i]))
                    - nl * gini(&counts(&reach[*left]))
                    - nr * gini(&counts(&reach[*right]));
                assert!(*gini_decrease > 0.0);
                assert!((gini_decrease - d).abs() < 1e-9, "{gini_decrease} vs {d}");
            }
        }
    }

    #[test]
    fn max_depth_and_min_leaf_are_honored() {
        let data: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let x = MatrixView::new(&data, 1).unwrap();
        let params = TreeParams { max_depth: Some(3), ..Default::default() };
        let t = Tree::grow(x, &labels, 2, &params, &mut rng()).unwrap();
        assert!(t.depth() <= 3);
        let params = TreeParams { min_leaf_size: 4, ..Default::default() };
        let t = Tree::grow(x, &labels, 2, &params, &mut rng()).unwrap();
        for node in t.nodes() {
            if let Node::Leaf { counts } = node {
                assert!(counts.iter().sum::<u32>() >= 4);
            }
        }
    }

    #[test]
    fn dumps_name_features() {
        let t = Tree::from_nodes(
            1,
            2,
            vec![
                Node::Split { feature: 0, threshold: 2.5, left: 1, right: 2, gini_decrease: 1.0 },
                Node::Leaf { counts: vec![1, 0] },
                Node::Leaf { counts: vec![0, 1] },
            ],
        )
        .unwrap();
        let names = vec!["distance_km".to_string()];
        assert!(t.to_text(&names).starts_with("distance_km < 2.5"));
        assert_eq!(t.to_json(&names)["left"]["counts"], json!([1, 0]));
    }
}
