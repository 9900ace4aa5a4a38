//! Synthetic survey data calibrated to target per-mode means.
//!
//! Only first moments are available for the target population, so every
//! spread parameter here is a modelling choice:
//!
//! * `distance_km` is log-normal per mode with a fixed log-space scale and a
//!   location that reproduces the mode's mean distance.
//! * `age_years` is drawn uniformly from the widest window inside
//!   `age_window` centred on the target mean, then stochastically rounded,
//!   which keeps the expectation exact.
//! * Other counts are `floor + Poisson(mean - floor)`; household size has a
//!   floor of one person, car and bike counts a floor of zero.
//! * Binary columns are independent given the mode, except the indicator
//!   groups (urbanization, public-transport service level, language), which
//!   use one categorical draw each. Cross-column correlation therefore only
//!   arises through the mode.
//!
//! The target group percentages are rounded and do not always add up to 100;
//! group probabilities are normalized before sampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    Dataset, FeatureKind, FeatureSchema, TravelMode, LANGUAGE, PT_SERVICE, URBANIZATION,
};
use crate::error::{Error, Result};
use crate::rng::{substream, Domain, StreamRng};

const AGE: &str = "age_years";
const COUNT_FLOORS: [(&str, u32); 3] = [("household_size", 1), ("n_cars", 0), ("n_bikes", 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    pub mode: TravelMode,
    pub count: usize,
    pub distance_mean_km: f64,
    /// Bernoulli probability per binary column.
    pub probabilities: BTreeMap<String, f64>,
    /// Target mean per count column.
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Log-space standard deviation of the distance distribution.
    pub distance_log_sd: f64,
    /// Inclusive age bounds in years.
    pub age_window: [f64; 2],
    /// Allowed deviation of an indicator group's probability sum from one.
    pub group_sum_tolerance: f64,
    pub modes: Vec<ModeParams>,
}

/// Mode, row count, mean distance, binary probabilities, count means.
type TableRow = (TravelMode, usize, f64, [f64; 15], [f64; 4]);

#[rustfmt::skip]
const DEFAULT_TABLE: [TableRow; 4] = [
    // probabilities in BINARY_ORDER, then means in COUNT_ORDER
    (TravelMode::Car, 280, 4.08,
        [0.73, 0.65, 0.20, 0.15, 0.09, 0.11, 0.25, 0.29, 0.25, 0.52, 0.69, 0.52, 0.10, 0.58, 0.24],
        [8.86, 4.15, 1.67, 3.47]),
    (TravelMode::PublicTransport, 261, 3.94,
        [0.75, 0.43, 0.21, 0.35, 0.05, 0.07, 0.15, 0.38, 0.34, 0.41, 0.72, 0.64, 0.05, 0.67, 0.19],
        [9.08, 4.16, 1.69, 3.80]),
    (TravelMode::Cycling, 259, 1.53,
        [0.92, 0.65, 0.20, 0.15, 0.09, 0.09, 0.29, 0.28, 0.25, 0.55, 0.76, 0.11, 0.03, 0.63, 0.16],
        [9.81, 4.36, 1.53, 4.35]),
    (TravelMode::Walking, 2199, 0.75,
        [0.99, 0.69, 0.18, 0.13, 0.15, 0.18, 0.28, 0.26, 0.13, 0.50, 0.71, 0.28, 0.02, 0.51, 0.22],
        [8.88, 4.29, 1.44, 3.86]),
];

const BINARY_ORDER: [&str; 15] = [
    "same_municipality", "urban", "suburban", "rural", "pt_very_good", "pt_good", "pt_moderate",
    "pt_poor", "pt_none", "female", "swiss", "french", "italian", "home_owner", "rain",
];
const COUNT_ORDER: [&str; 4] = ["age_years", "household_size", "n_cars", "n_bikes"];

impl Default for SynthConfig {
    fn default() -> Self {
        let modes = DEFAULT_TABLE
            .iter()
            .map(|(mode, count, dist, probs, means)| ModeParams {
                mode: *mode,
                count: *count,
                distance_mean_km: *dist,
                probabilities: BINARY_ORDER.iter().zip(probs).map(|(k, v)| (k.to_string(), *v)).collect(),
                means: COUNT_ORDER.iter().zip(means).map(|(k, v)| (k.to_string(), *v)).collect(),
            })
            .collect();
        SynthConfig {
            seed: 42,
            distance_log_sd: 0.9,
            age_window: [6.0, 12.0],
            group_sum_tolerance: 0.02,
            modes,
        }
    }
}

/// Sampling plan for one mode, resolved from validated parameters.
#[derive(Debug, Clone)]
struct ModePlan {
    mode: TravelMode,
    count: usize,
    distance: LogNormal<f64>,
    /// (column index, probability) for independent binary columns.
    bernoulli: Vec<(usize, f64)>,
    /// Categorical groups: column indices and normalized probabilities.
    /// A `None` column is an absorbed reference level.
    groups: Vec<Vec<(Option<usize>, f64)>>,
    age: (usize, f64),
    poisson: Vec<(usize, u32, Option<Poisson<f64>>)>,
}

impl SynthConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SynthConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Multiplies every mode's row count by `factor`.
    pub fn scaled(mut self, factor: usize) -> Self {
        for m in &mut self.modes {
            m.count *= factor;
        }
        self
    }

    pub fn mode_params(&self, mode: TravelMode) -> Option<&ModeParams> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn total_rows(&self) -> usize {
        self.modes.iter().map(|m| m.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_log_sd > 0.0 && self.distance_log_sd.is_finite()) {
            return Err(Error::config("distance_log_sd must be positive"));
        }
        let [lo, hi] = self.age_window;
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::config("age_window must satisfy 0 <= lo < hi"));
        }
        if !(self.group_sum_tolerance >= 0.0 && self.group_sum_tolerance < 1.0) {
            return Err(Error::config("group_sum_tolerance must be in [0, 1)"));
        }
        for mode in TravelMode::ALL {
            if self.modes.iter().filter(|m| m.mode == mode).count() > 1 {
                return Err(Error::config(format!("mode `{mode}` listed twice")));
            }
        }
        if self.total_rows() == 0 {
            return Err(Error::config("all mode counts are zero"));
        }
        for m in &self.modes {
            self.validate_mode(m)?;
        }
        Ok(())
    }

    fn validate_mode(&self, m: &ModeParams) -> Result<()> {
        let ctx = |msg: String| Error::config(format!("mode `{}`: {msg}", m.mode));
        if !(m.distance_mean_km > 0.0 && m.distance_mean_km.is_finite()) {
            return Err(ctx("distance_mean_km must be positive".into()));
        }
        check_keys(&m.probabilities, &BINARY_ORDER).map_err(ctx)?;
        check_keys(&m.means, &COUNT_ORDER).map_err(ctx)?;
        for (k, &p) in &m.probabilities {
            if !(0.0..=1.0).contains(&p) {
                return Err(ctx(format!("probability `{k}` = {p} outside [0, 1]")));
            }
        }
        for (k, &v) in &m.means {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ctx(format!("mean `{k}` = {v} must be non-negative")));
            }
        }
        for group in [&URBANIZATION[..], &PT_SERVICE[..]] {
            let sum: f64 = group.iter().map(|c| m.probabilities[*c]).sum();
            if (sum - 1.0).abs() > self.group_sum_tolerance {
                return Err(ctx(format!("{} probabilities sum to {sum}", group.join("/"))));
            }
        }
        let lang: f64 = LANGUAGE.iter().map(|c| m.probabilities[*c]).sum();
        if lang > 1.0 + self.group_sum_tolerance {
            return Err(ctx(format!("french + italian = {lang} exceeds 1")));
        }
        let age = m.means[AGE];
        let [lo, hi] = self.age_window;
        if !(lo..=hi).contains(&age) {
            return Err(ctx(format!("age mean {age} outside window [{lo}, {hi}]")));
        }
        for (col, floor) in COUNT_FLOORS {
            if m.means[col] < floor as f64 {
                return Err(ctx(format!("`{col}` mean below its floor {floor}")));
            }
        }
        Ok(())
    }

    /// Expected value of every canonical column for one mode, after group normalization.
    pub fn targets(&self, mode: TravelMode) -> Option<Vec<f64>> {
        let m = self.mode_params(mode)?;
        let schema = FeatureSchema::canonical();
        let mut out = vec![0.0; schema.len()];
        for (j, spec) in schema.features().iter().enumerate() {
            out[j] = match spec.kind {
                FeatureKind::Continuous => m.distance_mean_km,
                FeatureKind::Count => m.means[&spec.name],
                FeatureKind::Binary => m.probabilities[&spec.name],
            };
        }
        for group in [&URBANIZATION[..], &PT_SERVICE[..]] {
            let idx: Vec<usize> = group.iter().map(|c| schema.index_of(c).unwrap()).collect();
            let sum: f64 = idx.iter().map(|&j| out[j]).sum();
            for j in idx {
                out[j] /= sum;
            }
        }
        let lang: Vec<usize> = LANGUAGE.iter().map(|c| schema.index_of(c).unwrap()).collect();
        let lang_sum: f64 = lang.iter().map(|&j| out[j]).sum();
        if lang_sum > 1.0 {
            for j in lang {
                out[j] /= lang_sum;
            }
        }
        Some(out)
    }

    fn plan(&self, m: &ModeParams, schema: &FeatureSchema) -> Result<ModePlan> {
        let sd = self.distance_log_sd;
        let mu = m.distance_mean_km.ln() - sd * sd / 2.0;
        let distance = LogNormal::new(mu, sd).map_err(|e| Error::config(e.to_string()))?;
        let col = |name: &str| schema.index_of(name).expect("canonical column");
        let targets = self.targets(m.mode).expect("mode present");

        let grouped: Vec<&str> =
            URBANIZATION.iter().chain(PT_SERVICE.iter()).chain(LANGUAGE.iter()).copied().collect();
        let bernoulli = BINARY_ORDER
            .iter()
            .filter(|c| !grouped.contains(c))
            .map(|c| (col(c), targets[col(c)]))
            .collect();
        let mut groups: Vec<Vec<(Option<usize>, f64)>> = [&URBANIZATION[..], &PT_SERVICE[..]]
            .iter()
            .map(|g| g.iter().map(|c| (Some(col(c)), targets[col(c)])).collect())
            .collect();
        let mut language: Vec<(Option<usize>, f64)> =
            LANGUAGE.iter().map(|c| (Some(col(c)), targets[col(c)])).collect();
        let german = (1.0 - language.iter().map(|x| x.1).sum::<f64>()).max(0.0);
        language.push((None, german));
        groups.push(language);

        let poisson = COUNT_FLOORS
            .iter()
            .map(|&(c, floor)| {
                let lambda = m.means[c] - floor as f64;
                let dist = if lambda > 0.0 {
                    Some(Poisson::new(lambda).map_err(|e| Error::config(e.to_string()))?)
                } else {
                    None
                };
                Ok((col(c), floor, dist))
            })
            .collect::<Result<_>>()?;

        Ok(ModePlan {
            mode: m.mode,
            count: m.count,
            distance,
            bernoulli,
            groups,
            age: (col(AGE), m.means[AGE]),
            poisson,
        })
    }
}

fn check_keys(map: &BTreeMap<String, f64>, expected: &[&str]) -> std::result::Result<(), String> {
    if let Some(k) = map.keys().find(|k| !expected.contains(&k.as_str())) {
        return Err(format!("unknown column `{k}`"));
    }
    if let Some(k) = expected.iter().find(|k| !map.contains_key(**k)) {
        return Err(format!("missing column `{k}`"));
    }
    Ok(())
}

impl ModePlan {
    fn sample_row(&self, cfg: &SynthConfig, p: usize, rng: &mut StreamRng, out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + p, 0.0);
        let row = &mut out[start..];
        row[0] = self.distance.sample(rng);
        for &(j, prob) in &self.bernoulli {
            row[j] = if rng.random::<f64>() < prob { 1.0 } else { 0.0 };
        }
        for group in &self.groups {
            let total: f64 = group.iter().map(|x| x.1).sum();
            let mut u = rng.random::<f64>() * total;
            let mut chosen = group.last().and_then(|x| x.0);
            for &(j, w) in group {
                if u < w {
                    chosen = j;
                    break;
                }
                u -= w;
            }
            if let Some(j) = chosen {
                row[j] = 1.0;
            }
        }
        let (age_col, age_mean) = self.age;
        let [lo, hi] = cfg.age_window;
        let half = (age_mean - lo).min(hi - age_mean);
        let u = age_mean - half + 2.0 * half * rng.random::<f64>();
        let base = u.floor();
        row[age_col] = if rng.random::<f64>() < u - base { base + 1.0 } else { base };
        for (j, floor, dist) in &self.poisson {
            let extra = dist.as_ref().map_or(0.0, |d| d.sample(rng));
            row[*j] = *floor as f64 + extra;
        }
    }
}

/// Draws a dataset with exactly the configured per-mode counts.
///
/// Each mode uses its own substream keyed by `(seed, mode index)`, so the
/// result does not depend on how modes are scheduled. Rows are shuffled with
/// a separate substream before returning.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let schema = FeatureSchema::canonical();
    let p = schema.len();
    let plans: Vec<ModePlan> = TravelMode::ALL
        .iter()
        .filter_map(|&mode| config.mode_params(mode))
        .filter(|m| m.count > 0)
        .map(|m| config.plan(m, &schema))
        .collect::<Result<_>>()?;

    let blocks: Vec<(TravelMode, Vec<f64>)> = plans
        .par_iter()
        .map(|plan| {
            let mut rng = substream(config.seed, Domain::SynthMode, plan.mode.index() as u64);
            let mut values = Vec::with_capacity(plan.count * p);
            for _ in 0..plan.count {
                plan.sample_row(config, p, &mut rng, &mut values);
            }
            (plan.mode, values)
        })
        .collect();

    let mut rows: Vec<(&[f64], TravelMode)> = blocks
        .iter()
        .flat_map(|(mode, values)| values.chunks_exact(p).map(move |r| (r, *mode)))
        .collect();
    rows.shuffle(&mut substream(config.seed, Domain::SynthShuffle, 0));

    let mut values = Vec::with_capacity(rows.len() * p);
    let mut labels = Vec::with_capacity(rows.len());
    for (r, mode) in rows {
        values.extend_from_slice(r);
        labels.push(mode);
    }
    Dataset::new(schema, values, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationCell {
    pub mode: TravelMode,
    pub column: String,
    pub target: f64,
    pub sample_mean: f64,
    pub deviation: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub tolerance: f64,
    pub cells: Vec<CalibrationCell>,
}

impl CalibrationReport {
    pub fn flagged(&self) -> impl Iterator<Item = &CalibrationCell> {
        self.cells.iter().filter(|c| c.flagged)
    }

    pub fn max_deviation(&self, kind: FeatureKind) -> f64 {
        let schema = FeatureSchema::canonical();
        self.cells
            .iter()
            .filter(|c| schema.features()[schema.index_of(&c.column).unwrap()].kind == kind)
            .map(|c| c.deviation)
            .fold(0.0, f64::max)
    }
}

/// Absolute deviation of each per-mode sample mean from its configured target.
/// Modes without rows in `data` are skipped.
pub fn calibration_report(data: &Dataset, config: &SynthConfig, tolerance: f64) -> Result<CalibrationReport> {
    if data.schema() != &FeatureSchema::canonical() {
        return Err(Error::Schema("calibration requires the canonical schema".into()));
    }
    config.validate()?;
    let summary = crate::data::describe(data)?;
    let mut cells = Vec::new();
    for mode in TravelMode::ALL {
        let (Some(means), Some(targets)) = (&summary.mode(mode).means, config.targets(mode)) else {
            continue;
        };
        for (j, column) in summary.columns.iter().enumerate() {
            let deviation = (means[j] - targets[j]).abs();
            cells.push(CalibrationCell {
                mode,
                column: column.clone(),
                target: targets[j],
                sample_mean: means[j],
                deviation,
                flagged: deviation > tolerance,
            });
        }
    }
    Ok(CalibrationReport { tolerance, cells })
}
