//! Bagged CART ensembles with majority voting and Mean Decrease Gini.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSchema, MatrixView};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, Domain, StreamRng};
use crate::tree::{argmax, check_labels, RankedFeatures, Tree, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// How each tree's training rows are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `n` draws with replacement.
    #[default]
    Bootstrap,
    /// Every row exactly once. Used to check the ensemble against a single tree.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` resolves to `floor(sqrt(p))` at fit time.
    pub mtry: Option<usize>,
    pub min_leaf_size: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            mtry: None,
            min_leaf_size: 1,
            max_depth: None,
            seed: 42,
            sampling: Sampling::Bootstrap,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1))
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("n_trees must be at least 1"));
        }
        let mtry = self.resolved_mtry(n_features);
        if mtry == 0 || mtry > n_features {
            return Err(Error::config(format!("mtry {mtry} outside 1..={n_features}")));
        }
        if self.min_leaf_size == 0 {
            return Err(Error::config("min_leaf_size must be at least 1"));
        }
        if self.max_depth == Some(0) {
            return Err(Error::config("max_depth must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub schema_fingerprint: String,
    pub n_classes: usize,
    /// Parameters with `mtry` resolved.
    pub params: ForestParams,
    /// Mean over trees of each feature's summed split decreases.
    pub mdg: Vec<f64>,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Fits `params.n_trees` trees, each on its own sample drawn from the
    /// substream `(seed, tree index)`. Results do not depend on the number of
    /// worker threads.
    pub fn fit(
        x: MatrixView<'_>,
        labels: &[usize],
        n_classes: usize,
        schema: &FeatureSchema,
        params: &ForestParams,
    ) -> Result<ForestModel> {
        let n = x.n_rows();
        let p = x.n_cols();
        if labels.len() != n {
            return Err(Error::invalid("one label per row required"));
        }
        if schema.len() != p {
            return Err(Error::Schema(format!("schema has {} columns, data has {p}", schema.len())));
        }
        if n < 2 {
            return Err(Error::invalid("forest needs at least two rows"));
        }
        check_labels(labels, n_classes)?;
        if labels.iter().all(|&l| l == labels[0]) {
            return Err(Error::invalid("training labels contain a single class"));
        }
        params.validate(p)?;
        let mtry = params.resolved_mtry(p);
        let tree_params = TreeParams {
            min_leaf_size: params.min_leaf_size,
            max_depth: params.max_depth,
            mtry: Some(mtry),
        };
        let ranked = RankedFeatures::new(x);
        let trees: Vec<Tree> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = substream(params.seed, Domain::Tree, t as u64);
                let rows = match params.sampling {
                    Sampling::Bootstrap => (0..n).map(|_| rng.random_range(0..n)).collect(),
                    Sampling::Identity => (0..n).collect(),
                };
                Tree::grow_on(&ranked, labels, n_classes, rows, &tree_params, &mut rng)
            })
            .collect::<Result<_>>()?;

        let mut mdg = vec![0.0; p];
        for tree in &trees {
            for (m, d) in mdg.iter_mut().zip(tree.gini_decreases()) {
                *m += d;
            }
        }
        let scale = 1.0 / trees.len() as f64;
        mdg.iter_mut().for_each(|m| *m *= scale);

        Ok(ForestModel {
            format_version: MODEL_FORMAT_VERSION,
            feature_names: schema.names(),
            schema_fingerprint: schema.fingerprint(),
            n_classes,
            params: ForestParams { mtry: Some(mtry), ..params.clone() },
            mdg,
            trees,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features() {
            return Err(Error::Schema(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.n_features()
            )));
        }
        Ok(())
    }

    /// Per-class tree vote counts.
    pub fn votes(&self, row: &[f64]) -> Result<Vec<u32>> {
        self.check_row(row)?;
        let mut votes = vec![0u32; self.n_classes];
        for tree in &self.trees {
            votes[tree.predict_unchecked(row)] += 1;
        }
        Ok(votes)
    }

    /// Majority vote; ties go to the lowest class id.
    pub fn predict(&self, row: &[f64]) -> Result<usize> {
        Ok(argmax(&self.votes(row)?))
    }

    /// Vote fractions per class.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>> {
        let total = self.trees.len() as f64;
        Ok(self.votes(row)?.into_iter().map(|v| v as f64 / total).collect())
    }

    pub fn predict_all(&self, x: MatrixView<'_>) -> Result<Vec<usize>> {
        if x.n_cols() != self.n_features() {
            return Err(Error::Schema(format!(
                "matrix has {} columns, model expects {}",
                x.n_cols(),
                self.n_features()
            )));
        }
        x.rows().map(|r| self.predict(r)).collect()
    }

    /// Drop in accuracy when each column is permuted in turn.
    pub fn permutation_importance(
        &self,
        x: MatrixView<'_>,
        labels: &[usize],
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        if labels.len() != x.n_rows() || x.n_rows() == 0 {
            return Err(Error::invalid("permutation importance needs labelled rows"));
        }
        let accuracy = |data: &[f64]| -> Result<f64> {
            let view = MatrixView::new(data, x.n_cols())?;
            let pred = self.predict_all(view)?;
            Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
        };
        let base = accuracy(x.as_slice())?;
        let mut scratch = x.as_slice().to_vec();
        let mut out = Vec::with_capacity(x.n_cols());
        for j in 0..x.n_cols() {
            let mut column: Vec<f64> = x.rows().map(|r| r[j]).collect();
            column.shuffle(rng);
            for (r, v) in column.iter().enumerate() {
                scratch[r * x.n_cols() + j] = *v;
            }
            out.push(base - accuracy(&scratch)?);
            for r in 0..x.n_rows() {
                scratch[r * x.n_cols() + j] = x.get(r, j);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a saved model and checks it against the expected schema.
    pub fn from_json(text: &str, schema: &FeatureSchema) -> Result<ForestModel> {
        let model: ForestModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        if model.schema_fingerprint != schema.fingerprint() {
            return Err(Error::Schema("model was trained on a different schema".into()));
        }
        for tree in &model.trees {
            Tree::from_nodes(tree.n_features(), tree.n_classes(), tree.nodes().to_vec())?;
            if tree.n_features() != model.n_features() || tree.n_classes() != model.n_classes {
                return Err(Error::invalid("tree shape does not match the model"));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<ForestModel> {
        Self::from_json(&fs::read_to_string(path)?, schema)
    }
}

/// Seed for the forest fitted in repetition `rep` of an experiment.
pub fn repetition_forest_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, Domain::Forest, rep as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureKind, FeatureSpec};
    use crate::tree::Node;

    fn schema(p: usize) -> FeatureSchema {
        FeatureSchema::new(
            (0..p)
                .map(|j| FeatureSpec { name: format!("x{j}"), kind: FeatureKind::Continuous, unit: String::new() })
                .collect(),
        )
        .unwrap()
    }

    fn toy() -> (Vec<f64>, Vec<usize>) {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let a = (i * 13 % 40) as f64 / 4.0;
            let b = (i * 7 % 11) as f64;
            data.extend([a, b, (i % 3) as f64]);
            labels.push(usize::from(a + 0.3 * b > 5.0));
        }
        (data, labels)
    }

    fn forest_of(leaves: &[usize]) -> ForestModel {
        let trees = leaves
            .iter()
            .map(|&c| {
                let mut counts = vec![0; 4];
                counts[c] = 1;
                Tree::from_nodes(1, 4, vec![Node::Leaf { counts }]).unwrap()
            })
            .collect();
        ForestModel {
            format_version: MODEL_FORMAT_VERSION,
            feature_names: vec!["x0".into()],
            schema_fingerprint: schema(1).fingerprint(),
            n_classes: 4,
            params: ForestParams { n_trees: leaves.len(), ..Default::default() },
            mdg: vec![0.0],
            trees,
        }
    }

    #[test]
    fn majority_vote_and_ties() {
        // Car = 2, Walking = 0.
        assert_eq!(forest_of(&[2, 2, 0]).predict(&[0.0]).unwrap(), 2);
        assert_eq!(forest_of(&[1, 0]).predict(&[0.0]).unwrap(), 0);
        assert_eq!(forest_of(&[0, 0, 0, 1]).predict_proba(&[0.0]).unwrap(), vec![0.75, 0.25, 0.0, 0.0]);
        assert_eq!(forest_of(&[3]).predict_proba(&[0.0]).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        assert!(forest_of(&[3]).predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn single_identity_tree_matches_grow() {
        let (data, labels) = toy();
        let x = MatrixView::new(&data, 3).unwrap();
        let params = ForestParams { n_trees: 1, mtry: Some(3), sampling: Sampling::Identity, ..Default::default() };
        let model = ForestModel::fit(x, &labels, 2, &schema(3), &params).unwrap();
        let mut rng = substream(params.seed, Domain::Tree, 0);
        let tree = Tree::grow(x, &labels, 2, &TreeParams { mtry: Some(3), ..Default::default() }, &mut rng).unwrap();
        for r in x.rows() {
            assert_eq!(model.predict(r).unwrap(), tree.predict_one(r).unwrap());
        }
        assert_eq!(model.mdg, tree.gini_decreases());
    }

    #[test]
    fn fit_is_deterministic_and_conserves_mdg() {
        let (data, labels) = toy();
        let x = MatrixView::new(&data, 3).unwrap();
        let params = ForestParams { n_trees: 25, ..Default::default() };
        let a = ForestModel::fit(x, &labels, 2, &schema(3), &params).unwrap();
        let b = ForestModel::fit(x, &labels, 2, &schema(3), &params).unwrap();
        assert_eq!(a, b);
        let total: f64 = a
            .trees
            .iter()
            .flat_map(|t| t.nodes())
            .filter_map(|n| match n {
                Node::Split { gini_decrease, .. } => Some(*gini_decrease),
                _ => None,
            })
            .sum::<f64>()
            / 25.0;
        assert!((a.mdg.iter().sum::<f64>() - total).abs() < 1e-9);
        assert!(a.mdg.iter().all(|&m| m >= 0.0));
        assert_eq!(a.params.mtry, Some(1));
    }

    #[test]
    fn fit_rejects_bad_input() {
        let (data, _) = toy();
        let x = MatrixView::new(&data, 3).unwrap();
        assert!(ForestModel::fit(x, &[0; 40], 2, &schema(3), &ForestParams::default()).is_err());
        let (_, labels) = toy();
        let p = ForestParams { n_trees: 0, ..Default::default() };
        assert!(ForestModel::fit(x, &labels, 2, &schema(3), &p).is_err());
        let p = ForestParams { mtry: Some(4), ..Default::default() };
        assert!(ForestModel::fit(x, &labels, 2, &schema(3), &p).is_err());
    }

    #[test]
    fn json_round_trip_checks_schema() {
        let (data, labels) = toy();
        let x = MatrixView::new(&data, 3).unwrap();
        let params = ForestParams { n_trees: 3, ..Default::default() };
        let m = ForestModel::fit(x, &labels, 2, &schema(3), &params).unwrap();
        let text = m.to_json().unwrap();
        assert_eq!(ForestModel::from_json(&text, &schema(3)).unwrap(), m);
        assert!(matches!(ForestModel::from_json(&text, &schema(2)), Err(Error::Schema(_))));
    }

    #[test]
    fn permutation_importance_flags_signal_column() {
        let (data, labels) = toy();
        let x = MatrixView::new(&data, 3).unwrap();
        let params = ForestParams { n_trees: 30, mtry: Some(3), ..Default::default() };
        let m = ForestModel::fit(x, &labels, 2, &schema(3), &params).unwrap();
        let imp = m.permutation_importance(x, &labels, &mut substream(0, Domain::Permutation, 0)).unwrap();
        assert!(imp[0] > imp[2], "{imp:?}");
    }
}
