//! Relative variable importance and partial dependence.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{run_experiment_with, ExperimentConfig, ExperimentResult};
use crate::forest::ForestModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub mean_mdg: f64,
    /// `mean_mdg / max mean_mdg`, in [0, 1].
    pub relative: f64,
}

/// Features sorted by descending mean MDG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    /// Builds the report from per-feature mean MDG values. Equal values keep
    /// input order. If every value is zero, all relative values are zero.
    pub fn from_means(features: &[String], means: &[f64]) -> Result<Self> {
        if features.len() != means.len() {
            return Err(Error::invalid("one MDG value per feature required"));
        }
        if let Some(m) = means.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::invalid(format!("MDG value {m} is not a non-negative number")));
        }
        let max = means.iter().copied().fold(0.0, f64::max);
        let mut entries: Vec<ImportanceEntry> = features
            .iter()
            .zip(means)
            .map(|(f, &m)| ImportanceEntry {
                feature: f.clone(),
                mean_mdg: m,
                relative: if max > 0.0 { m / max } else { 0.0 },
            })
            .collect();
        entries.sort_by(|a, b| b.mean_mdg.total_cmp(&a.mean_mdg));
        Ok(ImportanceReport { entries })
    }

    pub fn top(&self) -> Option<&ImportanceEntry> {
        self.entries.first()
    }

    pub fn get(&self, feature: &str) -> Option<&ImportanceEntry> {
        self.entries.iter().find(|e| e.feature == feature)
    }
}

/// Averages the per-repetition MDG vectors and ranks the features.
pub fn importance_report(result: &ExperimentResult) -> Result<ImportanceReport> {
    if result.mdg.is_empty() || result.feature_names.is_empty() {
        return Err(Error::invalid("result holds no MDG vectors"));
    }
    let p = result.feature_names.len();
    if result.mdg.iter().any(|v| v.len() != p) {
        return Err(Error::invalid("MDG vector length does not match the feature list"));
    }
    let r = result.mdg.len() as f64;
    let means: Vec<f64> = (0..p).map(|j| result.mdg.iter().map(|v| v[j]).sum::<f64>() / r).collect();
    ImportanceReport::from_means(&result.feature_names, &means)
}

/// Evenly spaced grid `start, start + step, ...` strictly below `stop`.
pub fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop > start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::invalid("grid needs start < stop and a positive step"));
    }
    let n = ((stop - start) / step - 1e-9).ceil() as usize;
    Ok((0..n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("grid is empty"));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("grid must be finite and strictly ascending"));
    }
    Ok(())
}

/// Mean predicted probability (vote fraction) of `target_class` as `feature`
/// is set to each grid value in every row of `data`.
pub fn partial_dependence(
    model: &ForestModel,
    data: &Dataset,
    feature: &str,
    grid: &[f64],
    target_class: usize,
) -> Result<Vec<f64>> {
    check_grid(grid)?;
    if data.schema().fingerprint() != model.schema_fingerprint {
        return Err(Error::Schema("dataset columns do not match the model".into()));
    }
    if target_class >= model.n_classes {
        return Err(Error::invalid(format!("class {target_class} out of range")));
    }
    if data.n_rows() == 0 {
        return Err(Error::invalid("partial dependence needs at least one row"));
    }
    let j = data.schema().require(feature)?;
    let mut diff = vec![0i64; grid.len() + 1];
    for i in 0..data.n_rows() {
        let row = data.row(i);
        for tree in &model.trees {
            tree.sweep_votes(row, j, grid, target_class, &mut diff);
        }
    }
    let denom = (model.trees.len() * data.n_rows()) as f64;
    let mut running = 0i64;
    Ok(diff[..grid.len()]
        .iter()
        .map(|d| {
            running += d;
            running as f64 / denom
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    pub feature: String,
    pub target_class: usize,
    pub grid: Vec<f64>,
    /// `per_repetition[rep][grid point]`.
    pub per_repetition: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// Runs the repeated protocol and records each repetition's partial
/// dependence over its test rows, together with the pointwise mean.
pub fn pdp_with_result(
    data: &Dataset,
    config: &ExperimentConfig,
    feature: &str,
    grid: &[f64],
    target_class: usize,
) -> Result<(ExperimentResult, PdpCurve)> {
    check_grid(grid)?;
    if config.excluded_features().iter().any(|f| f == feature) {
        return Err(Error::invalid(format!("`{feature}` is excluded from task {}", config.task)));
    }
    data.schema().require(feature)?;
    if target_class >= config.task.spec().n_classes() {
        return Err(Error::invalid(format!("class {target_class} out of range")));
    }
    let (result, per_repetition) = run_experiment_with(data, config, &|model, test| {
        partial_dependence(model, test, feature, grid, target_class)
    })?;
    let r = per_repetition.len() as f64;
    let mean = (0..grid.len())
        .map(|g| per_repetition.iter().map(|c| c[g]).sum::<f64>() / r)
        .collect();
    let curve = PdpCurve {
        feature: feature.to_string(),
        target_class,
        grid: grid.to_vec(),
        per_repetition,
        mean,
    };
    Ok((result, curve))
}

pub fn pdp_across_repetitions(
    data: &Dataset,
    config: &ExperimentConfig,
    feature: &str,
    grid: &[f64],
    target_class: usize,
) -> Result<PdpCurve> {
    pdp_with_result(data, config, feature, grid, target_class).map(|(_, c)| c)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[order[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `None` if either
/// side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// First grid position where `curve` drops from `>= level` to `< level`,
/// linearly interpolated between the bracketing grid points.
pub fn first_downward_crossing(grid: &[f64], curve: &[f64], level: f64) -> Option<f64> {
    grid.windows(2).zip(curve.windows(2)).find_map(|(g, c)| {
        (c[0] >= level && c[1] < level).then(|| g[0] + (c[0] - level) / (c[0] - c[1]) * (g[1] - g[0]))
    })
}
