//! Feature schema and validated datasets.

mod csv_io;
mod describe;

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_to};
pub use describe::{
    correlation_matrix, describe, distance_histogram, DescriptiveSummary, DistanceHistogram,
    ModeSummary,
};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TravelMode {
    Walking,
    Cycling,
    Car,
    PublicTransport,
}

impl TravelMode {
    pub const ALL: [TravelMode; 4] = [
        TravelMode::Walking,
        TravelMode::Cycling,
        TravelMode::Car,
        TravelMode::PublicTransport,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TravelMode::Walking => "walking",
            TravelMode::Cycling => "cycling",
            TravelMode::Car => "car",
            TravelMode::PublicTransport => "public_transport",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            TravelMode::Walking => "Walking",
            TravelMode::Cycling => "Cycling",
            TravelMode::Car => "Car",
            TravelMode::PublicTransport => "Public Transport",
        }
    }
}

impl fmt::Display for TravelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TravelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TravelMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown travel mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Count,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub unit: String,
}

/// Column sets of which exactly one indicator is set per row.
pub const URBANIZATION: [&str; 3] = ["urban", "suburban", "rural"];
pub const PT_SERVICE: [&str; 5] = ["pt_very_good", "pt_good", "pt_moderate", "pt_poor", "pt_none"];
/// Language indicators. German is the absorbed reference level, so at most one is set.
pub const LANGUAGE: [&str; 2] = ["french", "italian"];

pub const DISTANCE: &str = "distance_km";
pub const MODE_COLUMN: &str = "mode";

const CANONICAL: [(&str, FeatureKind, &str); 20] = [
    ("distance_km", FeatureKind::Continuous, "km"),
    ("same_municipality", FeatureKind::Binary, ""),
    ("urban", FeatureKind::Binary, ""),
    ("suburban", FeatureKind::Binary, ""),
    ("rural", FeatureKind::Binary, ""),
    ("pt_very_good", FeatureKind::Binary, ""),
    ("pt_good", FeatureKind::Binary, ""),
    ("pt_moderate", FeatureKind::Binary, ""),
    ("pt_poor", FeatureKind::Binary, ""),
    ("pt_none", FeatureKind::Binary, ""),
    ("age_years", FeatureKind::Count, "years"),
    ("female", FeatureKind::Binary, ""),
    ("swiss", FeatureKind::Binary, ""),
    ("french", FeatureKind::Binary, ""),
    ("italian", FeatureKind::Binary, ""),
    ("household_size", FeatureKind::Count, "persons"),
    ("n_cars", FeatureKind::Count, "cars"),
    ("n_bikes", FeatureKind::Count, "bikes"),
    ("home_owner", FeatureKind::Binary, ""),
    ("rain", FeatureKind::Binary, ""),
];

/// Ordered predictor columns. Order defines column order everywhere downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &features {
            if f.name == MODE_COLUMN {
                return Err(Error::Schema(format!("`{MODE_COLUMN}` is reserved for the label")));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", f.name)));
            }
        }
        Ok(FeatureSchema { features })
    }

    /// The 20 predictor columns of the school-travel survey.
    pub fn canonical() -> Self {
        FeatureSchema {
            features: CANONICAL
                .iter()
                .map(|&(name, kind, unit)| FeatureSpec { name: name.into(), kind, unit: unit.into() })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` is not in the schema")))
    }

    /// Schema with the named columns removed; unknown names are an error.
    pub fn without(&self, excluded: &[String]) -> Result<Self> {
        for name in excluded {
            self.require(name)?;
        }
        Ok(FeatureSchema {
            features: self
                .features
                .iter()
                .filter(|f| !excluded.contains(&f.name))
                .cloned()
                .collect(),
        })
    }

    /// SHA-256 over `name:kind` pairs in order.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for f in &self.features {
            hasher.update(f.name.as_bytes());
            hasher.update(b":");
            hasher.update(format!("{:?}", f.kind).as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// Index groups (present in full) whose indicators must sum to exactly one.
    fn exclusive_groups(&self) -> Vec<(&'static [&'static str], Vec<usize>)> {
        [&URBANIZATION[..], &PT_SERVICE[..]]
            .into_iter()
            .filter_map(|group| {
                let idx: Option<Vec<usize>> = group.iter().map(|n| self.index_of(n)).collect();
                idx.map(|idx| (group, idx))
            })
            .collect()
    }

    /// Checks one row against the column kinds and indicator-group rules.
    pub fn validate_row(&self, row: &[f64]) -> std::result::Result<(), String> {
        if row.len() != self.len() {
            return Err(format!("expected {} values, found {}", self.len(), row.len()));
        }
        for (f, &v) in self.features.iter().zip(row) {
            if !v.is_finite() {
                return Err(format!("`{}` is not a finite number", f.name));
            }
            match f.kind {
                FeatureKind::Binary if v != 0.0 && v != 1.0 => {
                    return Err(format!("binary column `{}` has value {v}, expected 0 or 1", f.name));
                }
                FeatureKind::Count if v < 0.0 || v.fract() != 0.0 => {
                    return Err(format!("count column `{}` has value {v}, expected a non-negative integer", f.name));
                }
                FeatureKind::Continuous if v < 0.0 => {
                    return Err(format!("`{}` is negative ({v})", f.name));
                }
                _ => {}
            }
        }
        for (group, idx) in self.exclusive_groups() {
            let sum: f64 = idx.iter().map(|&i| row[i]).sum();
            if sum != 1.0 {
                return Err(format!("indicators {} must sum to 1, found {sum}", group.join("/")));
            }
        }
        let lang: f64 = LANGUAGE.iter().filter_map(|n| self.index_of(n)).map(|i| row[i]).sum();
        if lang > 1.0 {
            return Err("`french` and `italian` are mutually exclusive".into());
        }
        Ok(())
    }
}

/// Borrowed row-major feature matrix.
#[derive(Debug, Clone, Copy)]
pub struct MatrixView<'a> {
    data: &'a [f64],
    n_rows: usize,
    n_cols: usize,
}

impl<'a> MatrixView<'a> {
    pub fn new(data: &'a [f64], n_cols: usize) -> Result<Self> {
        if n_cols == 0 {
            return Err(Error::invalid("matrix needs at least one column"));
        }
        if !data.len().is_multiple_of(n_cols) {
            return Err(Error::invalid(format!(
                "{} values do not form rows of {n_cols} columns",
                data.len()
            )));
        }
        Ok(MatrixView { data, n_rows: data.len() / n_cols, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }
}

/// Validated feature matrix with one travel mode per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    values: Vec<f64>,
    labels: Vec<TravelMode>,
}

impl Dataset {
    /// Builds a dataset from row-major values, validating every row.
    pub fn new(schema: FeatureSchema, values: Vec<f64>, labels: Vec<TravelMode>) -> Result<Self> {
        let p = schema.len();
        if p == 0 {
            return Err(Error::Schema("schema has no columns".into()));
        }
        if values.len() != labels.len() * p {
            return Err(Error::invalid(format!(
                "{} values for {} rows of {p} columns",
                values.len(),
                labels.len()
            )));
        }
        for (row, chunk) in values.chunks_exact(p).enumerate() {
            schema
                .validate_row(chunk)
                .map_err(|message| Error::Validation { row, message })?;
        }
        Ok(Dataset { schema, values, labels })
    }

    pub fn empty(schema: FeatureSchema) -> Self {
        Dataset { schema, values: Vec::new(), labels: Vec::new() }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn labels(&self) -> &[TravelMode] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn matrix(&self) -> MatrixView<'_> {
        MatrixView { data: &self.values, n_rows: self.n_rows(), n_cols: self.n_features() }
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.chunks_exact(self.n_features()).map(move |r| r[j])
    }

    /// Rows at `indices`, in that order. Indices may repeat.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let p = self.n_features();
        let mut values = Vec::with_capacity(indices.len() * p);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { schema: self.schema.clone(), values, labels }
    }

    /// Drops the named columns.
    pub fn without_columns(&self, excluded: &[String]) -> Result<Dataset> {
        if excluded.is_empty() {
            return Ok(self.clone());
        }
        let schema = self.schema.without(excluded)?;
        let keep: Vec<usize> = schema
            .features()
            .iter()
            .map(|f| self.schema.index_of(&f.name).expect("subset of own schema"))
            .collect();
        let mut values = Vec::with_capacity(self.n_rows() * keep.len());
        for r in 0..self.n_rows() {
            let row = self.row(r);
            values.extend(keep.iter().map(|&j| row[j]));
        }
        Ok(Dataset { schema, values, labels: self.labels.clone() })
    }

    pub fn mode_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for m in &self.labels {
            counts[m.index()] += 1;
        }
        counts
    }
}
