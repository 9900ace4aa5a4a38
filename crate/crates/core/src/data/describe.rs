//! Per-mode summaries of a dataset.

use serde::Serialize;

use super::{Dataset, TravelMode, DISTANCE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: TravelMode,
    pub count: usize,
    /// `None` when the mode has no rows.
    pub means: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptiveSummary {
    pub columns: Vec<String>,
    /// One entry per mode, in [`TravelMode::ALL`] order.
    pub modes: Vec<ModeSummary>,
    pub overall: Vec<f64>,
    pub n_rows: usize,
}

impl DescriptiveSummary {
    pub fn mode(&self, mode: TravelMode) -> &ModeSummary {
        &self.modes[mode.index()]
    }

    pub fn mean(&self, mode: TravelMode, column: &str) -> Option<f64> {
        let j = self.columns.iter().position(|c| c == column)?;
        self.mode(mode).means.as_ref().map(|m| m[j])
    }
}

pub fn describe(data: &Dataset) -> Result<DescriptiveSummary> {
    if data.n_rows() == 0 {
        return Err(Error::invalid("cannot describe an empty dataset"));
    }
    let p = data.n_features();
    let mut sums = vec![vec![0.0; p]; 4];
    let mut counts = [0usize; 4];
    let mut total = vec![0.0; p];
    for (i, mode) in data.labels().iter().enumerate() {
        let m = mode.index();
        counts[m] += 1;
        for (j, &v) in data.row(i).iter().enumerate() {
            sums[m][j] += v;
            total[j] += v;
        }
    }
    let n = data.n_rows() as f64;
    let modes = TravelMode::ALL
        .iter()
        .map(|&mode| {
            let c = counts[mode.index()];
            ModeSummary {
                mode,
                count: c,
                means: (c > 0).then(|| sums[mode.index()].iter().map(|s| s / c as f64).collect()),
            }
        })
        .collect();
    Ok(DescriptiveSummary {
        columns: data.schema().names(),
        modes,
        overall: total.into_iter().map(|s| s / n).collect(),
        n_rows: data.n_rows(),
    })
}

/// Pearson correlation matrix of the named columns. Diagonal is exactly 1.
pub fn correlation_matrix(data: &Dataset, columns: &[String]) -> Result<Vec<Vec<f64>>> {
    if data.n_rows() < 2 {
        return Err(Error::invalid("correlation needs at least two rows"));
    }
    let n = data.n_rows() as f64;
    let mut centered = Vec::with_capacity(columns.len());
    let mut norms = Vec::with_capacity(columns.len());
    for name in columns {
        let j = data.schema().require(name)?;
        let mean = data.column(j).sum::<f64>() / n;
        let c: Vec<f64> = data.column(j).map(|v| v - mean).collect();
        let ss: f64 = c.iter().map(|v| v * v).sum();
        if ss == 0.0 {
            return Err(Error::invalid(format!("column `{name}` has zero variance")));
        }
        centered.push(c);
        norms.push(ss.sqrt());
    }
    let k = columns.len();
    let mut out = vec![vec![0.0; k]; k];
    for a in 0..k {
        out[a][a] = 1.0;
        for b in (a + 1)..k {
            let dot: f64 = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum();
            let r = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
            out[a][b] = r;
            out[b][a] = r;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceHistogram {
    pub bin_width_km: f64,
    pub max_km: f64,
    /// Lower edge of each bin.
    pub bin_starts: Vec<f64>,
    /// `counts[mode.index()][bin]`.
    pub counts: Vec<Vec<usize>>,
}

impl DistanceHistogram {
    pub fn mode_counts(&self, mode: TravelMode) -> &[usize] {
        &self.counts[mode.index()]
    }
}

/// Bins `distance_km` per mode; rows at or beyond `max_km` are dropped.
pub fn distance_histogram(data: &Dataset, max_km: f64, bin_width_km: f64) -> Result<DistanceHistogram> {
    if !(max_km > 0.0) || !(bin_width_km > 0.0) {
        return Err(Error::invalid("max_km and bin_width_km must be positive"));
    }
    let j = data.schema().require(DISTANCE)?;
    let n_bins = (max_km / bin_width_km).ceil() as usize;
    let mut counts = vec![vec![0usize; n_bins]; 4];
    for (d, mode) in data.column(j).zip(data.labels()) {
        if d >= max_km {
            continue;
        }
        let bin = ((d / bin_width_km).floor() as usize).min(n_bins - 1);
        counts[mode.index()][bin] += 1;
    }
    Ok(DistanceHistogram {
        bin_width_km,
        max_km,
        bin_starts: (0..n_bins).map(|b| b as f64 * bin_width_km).collect(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;

    fn rows(dists: &[(f64, TravelMode)]) -> Dataset {
        let s = FeatureSchema::canonical();
        let mut values = Vec::new();
        for &(d, _) in dists {
            let mut row = vec![0.0; s.len()];
            row[0] = d;
            row[s.index_of("urban").unwrap()] = 1.0;
            row[s.index_of("pt_good").unwrap()] = 1.0;
            row[s.index_of("n_bikes").unwrap()] = (d * 2.0).round();
            values.extend(row);
        }
        Dataset::new(s, values, dists.iter().map(|x| x.1).collect()).unwrap()
    }

    #[test]
    fn identical_rows_have_exact_means() {
        let d = rows(&[(1.25, TravelMode::Car), (1.25, TravelMode::Car)]);
        let s = describe(&d).unwrap();
        assert_eq!(s.mode(TravelMode::Car).means.as_deref(), Some(d.row(0)));
        assert_eq!(s.overall, d.row(0));
        assert_eq!(s.mode(TravelMode::Walking).count, 0);
        assert!(s.mode(TravelMode::Walking).means.is_none());
    }

    #[test]
    fn empty_dataset_cannot_be_described() {
        assert!(describe(&Dataset::empty(FeatureSchema::canonical())).is_err());
    }

    #[test]
    fn histogram_bins_directly() {
        let d = rows(&[
            (0.2, TravelMode::Walking),
            (0.4, TravelMode::Walking),
            (1.1, TravelMode::Walking),
            (12.0, TravelMode::Car),
        ]);
        let h = distance_histogram(&d, 10.0, 0.5).unwrap();
        assert_eq!(h.bin_starts.len(), 20);
        assert_eq!(&h.mode_counts(TravelMode::Walking)[..4], &[2, 0, 1, 0]);
        assert_eq!(h.mode_counts(TravelMode::Car).iter().sum::<usize>(), 0);
    }

    #[test]
    fn histogram_of_empty_dataset_is_zero() {
        let h = distance_histogram(&Dataset::empty(FeatureSchema::canonical()), 10.0, 0.5).unwrap();
        assert!(h.counts.iter().flatten().all(|&c| c == 0));
        assert!(distance_histogram(&Dataset::empty(FeatureSchema::canonical()), 0.0, 0.5).is_err());
    }

    #[test]
    fn correlation_edge_cases() {
        let d = rows(&[(0.2, TravelMode::Walking), (0.9, TravelMode::Car), (3.0, TravelMode::Car)]);
        let cols = vec!["distance_km".to_string(), "distance_km".to_string()];
        let c = correlation_matrix(&d, &cols).unwrap();
        assert_eq!(c[0][1], 1.0);
        let err = correlation_matrix(&d, &["rural".to_string()]).unwrap_err();
        assert!(err.to_string().contains("rural"));
    }

    #[test]
    fn negated_indicator_correlates_minus_one() {
        let s = FeatureSchema::canonical();
        let mut values = Vec::new();
        for k in 0..6 {
            let mut row = vec![0.0; s.len()];
            row[0] = 1.0;
            let urban = k % 2 == 0;
            row[s.index_of("urban").unwrap()] = if urban { 1.0 } else { 0.0 };
            row[s.index_of("rural").unwrap()] = if urban { 0.0 } else { 1.0 };
            row[s.index_of("pt_none").unwrap()] = 1.0;
            values.extend(row);
        }
        let d = Dataset::new(s, values, vec![TravelMode::Car; 6]).unwrap();
        let c = correlation_matrix(&d, &["urban".into(), "rural".into()]).unwrap();
        assert!((c[0][1] + 1.0).abs() < 1e-15);
    }
}
