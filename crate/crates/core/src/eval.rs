//! Repeated balanced train/test evaluation.
//!
//! Each repetition balances the task classes by downsampling, splits the
//! balanced rows into train and test sets, fits a forest on the training
//! part and scores it on the test part. Repetition `r` draws all of its
//! randomness from substreams keyed by `r`, so repetitions can run in any
//! order or in parallel.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TravelMode, DISTANCE};
use crate::error::{Error, Result};
use crate::forest::{repetition_forest_seed, ForestModel, ForestParams};
use crate::rng::{substream, Domain, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [TaskId::T1, TaskId::T2, TaskId::T3, TaskId::T4, TaskId::T5, TaskId::T6];

    pub fn spec(self) -> TaskSpec {
        use TravelMode::*;
        let map = |f: fn(TravelMode) -> Option<usize>| TravelMode::ALL.map(f);
        let names = |n: &[&str]| n.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match self {
            TaskId::T1 => TaskSpec {
                id: self,
                description: "active vs non-active".into(),
                class_names: names(&["Active modes", "Non-active modes"]),
                label_map: map(|m| Some(usize::from(matches!(m, Car | PublicTransport)))),
                excluded_features: vec![],
            },
            TaskId::T2 | TaskId::T3 => TaskSpec {
                id: self,
                description: if self == TaskId::T2 {
                    "car vs other modes".into()
                } else {
                    "car vs other modes, without distance".into()
                },
                class_names: names(&["Car", "Other modes"]),
                label_map: map(|m| Some(usize::from(m != Car))),
                excluded_features: if self == TaskId::T3 { vec![DISTANCE.to_string()] } else { vec![] },
            },
            TaskId::T4 => TaskSpec {
                id: self,
                description: "four travel modes".into(),
                class_names: TravelMode::ALL.iter().map(|m| m.display_name().to_string()).collect(),
                label_map: map(|m| Some(m.index())),
                excluded_features: vec![],
            },
            TaskId::T5 => TaskSpec {
                id: self,
                description: "walking vs other modes".into(),
                class_names: names(&["Walking", "Other modes"]),
                label_map: map(|m| Some(usize::from(m != Walking))),
                excluded_features: vec![],
            },
            TaskId::T6 => TaskSpec {
                id: self,
                description: "car vs public transport".into(),
                class_names: names(&["Car", "Public Transport"]),
                label_map: map(|m| match m {
                    Car => Some(0),
                    PublicTransport => Some(1),
                    _ => None,
                }),
                excluded_features: vec![],
            },
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown task `{s}` (expected T1..T6)")))
    }
}

/// How one prediction task maps travel modes to classes, and which predictors it drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub description: String,
    pub class_names: Vec<String>,
    /// Class id per travel mode (indexed by [`TravelMode::index`]); `None` drops the mode.
    pub label_map: [Option<usize>; 4],
    pub excluded_features: Vec<String>,
}

impl TaskSpec {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn label(&self, mode: TravelMode) -> Option<usize> {
        self.label_map[mode.index()]
    }

    /// Task class ids of `data`'s rows; rows whose mode is filtered out are an error.
    pub fn labels(&self, data: &Dataset) -> Result<Vec<usize>> {
        data.labels()
            .iter()
            .map(|&m| {
                self.label(m)
                    .ok_or_else(|| Error::invalid(format!("mode `{m}` is not part of task {}", self.id)))
            })
            .collect()
    }
}

/// Downsamples every task class to the size of the smallest one, without
/// replacement, and shuffles the result. Rows of filtered-out modes are dropped.
pub fn balance(data: &Dataset, task: &TaskSpec, rng: &mut StreamRng) -> Result<Dataset> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); task.n_classes()];
    for (i, &mode) in data.labels().iter().enumerate() {
        if let Some(c) = task.label(mode) {
            by_class[c].push(i);
        }
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(task.class_names[c].clone()));
    }
    let target = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut chosen = Vec::with_capacity(target * by_class.len());
    for rows in &by_class {
        chosen.extend(sample(rng, rows.len(), target).into_iter().map(|k| rows[k]));
    }
    chosen.shuffle(rng);
    Ok(data.subset(&chosen))
}

/// Uniform random partition; the training part has `round(train_fraction * n)` rows (halves round up).
pub fn split(data: &Dataset, train_fraction: f64, rng: &mut StreamRng) -> Result<(Dataset, Dataset)> {
    let n = data.n_rows();
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train_fraction {train_fraction} outside (0, 1)")));
    }
    if n < 2 {
        return Err(Error::invalid("split needs at least two rows"));
    }
    let n_train = (train_fraction * n as f64 + 0.5).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(format!("split of {n} rows leaves an empty part")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok((data.subset(&order[..n_train]), data.subset(&order[n_train..])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskId,
    pub repetitions: usize,
    pub train_fraction: f64,
    /// Tree and ensemble settings. The forest seed is derived per repetition from `seed`.
    pub forest: ForestParams,
    pub seed: u64,
    /// Predictors dropped on top of the task's own exclusions.
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default)]
    pub permutation_importance: bool,
}

impl ExperimentConfig {
    pub fn new(task: TaskId) -> Self {
        ExperimentConfig {
            task,
            repetitions: 100,
            train_fraction: 0.75,
            forest: ForestParams::default(),
            seed: 42,
            exclude: Vec::new(),
            permutation_importance: false,
        }
    }

    pub fn excluded_features(&self) -> Vec<String> {
        let mut out = self.task.spec().excluded_features;
        for f in &self.exclude {
            if !out.contains(f) {
                out.push(f.clone());
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    /// `mean ± 1.96 · sd / √R`.
    NormalApproxOfMean,
    /// 2.5th and 97.5th sample percentiles (linear interpolation).
    EmpiricalPercentile,
}

impl IntervalMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            IntervalMethod::NormalApproxOfMean => "normal-approx-of-mean",
            IntervalMethod::EmpiricalPercentile => "empirical-percentile",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: IntervalMethod,
}

/// Primary (normal-approximation) and secondary (percentile) 95% intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalPair {
    pub normal: IntervalSummary,
    pub percentile: IntervalSummary,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_interval(values: &[f64]) -> Result<IntervalPair> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid("an interval needs at least two values"));
    }
    let constant = values.iter().all(|&v| v == values[0]);
    // Summation rounding would otherwise give a constant vector a nonzero spread.
    let mean = if constant { values[0] } else { values.iter().sum::<f64>() / n as f64 };
    let var = if constant { 0.0 } else { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 };
    let half = 1.96 * var.sqrt() / (n as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(IntervalPair {
        normal: IntervalSummary {
            mean,
            lower: mean - half,
            upper: mean + half,
            method: IntervalMethod::NormalApproxOfMean,
        },
        percentile: IntervalSummary {
            mean,
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
            method: IntervalMethod::EmpiricalPercentile,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub task: TaskId,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub repetitions: usize,
    pub seed: u64,
    pub overall_accuracy: Vec<f64>,
    /// `class_accuracy[class][rep]`: recall on the test rows of that class;
    /// `None` if the class had no test rows in that repetition.
    pub class_accuracy: Vec<Vec<Option<f64>>>,
    /// `test_class_counts[rep][class]`.
    pub test_class_counts: Vec<Vec<usize>>,
    /// `mdg[rep][feature]`.
    pub mdg: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation_importance: Option<Vec<Vec<f64>>>,
    /// Present when there are at least two repetitions.
    pub overall_interval: Option<IntervalPair>,
    pub class_intervals: Vec<Option<IntervalPair>>,
}

impl ExperimentResult {
    pub fn mean_overall_accuracy(&self) -> f64 {
        self.overall_accuracy.iter().sum::<f64>() / self.overall_accuracy.len() as f64
    }
}

/// One repetition's scores plus whatever the hook computed.
struct Repetition<T> {
    overall: f64,
    per_class: Vec<Option<f64>>,
    counts: Vec<usize>,
    mdg: Vec<f64>,
    permutation: Option<Vec<f64>>,
    extra: T,
}

fn run_one<T>(
    data: &Dataset,
    task: &TaskSpec,
    config: &ExperimentConfig,
    rep: usize,
    hook: &(dyn Fn(&ForestModel, &Dataset) -> Result<T> + Sync),
) -> Result<Repetition<T>> {
    let mut rng = substream(config.seed, Domain::Repetition, rep as u64);
    let balanced = balance(data, task, &mut rng)?;
    let (train, test) = split(&balanced, config.train_fraction, &mut rng)?;
    let train_labels = task.labels(&train)?;
    let test_labels = task.labels(&test)?;
    let params = ForestParams { seed: repetition_forest_seed(config.seed, rep), ..config.forest.clone() };
    let model = ForestModel::fit(train.matrix(), &train_labels, task.n_classes(), train.schema(), &params)?;
    let predictions = model.predict_all(test.matrix())?;

    let k = task.n_classes();
    let mut counts = vec![0usize; k];
    let mut correct = vec![0usize; k];
    for (&p, &l) in predictions.iter().zip(&test_labels) {
        counts[l] += 1;
        if p == l {
            correct[l] += 1;
        }
    }
    let overall = correct.iter().sum::<usize>() as f64 / test_labels.len() as f64;
    let per_class = correct
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    let permutation = if config.permutation_importance {
        let mut prng = substream(config.seed, Domain::Permutation, rep as u64);
        Some(model.permutation_importance(test.matrix(), &test_labels, &mut prng)?)
    } else {
        None
    };
    let extra = hook(&model, &test)?;
    Ok(Repetition { overall, per_class, counts, mdg: model.mdg, permutation, extra })
}

/// Runs the repeated protocol and calls `hook` with each repetition's model
/// and test rows (restricted to the task's predictors).
pub fn run_experiment_with<T: Send>(
    data: &Dataset,
    config: &ExperimentConfig,
    hook: &(dyn Fn(&ForestModel, &Dataset) -> Result<T> + Sync),
) -> Result<(ExperimentResult, Vec<T>)> {
    config.validate()?;
    let task = config.task.spec();
    let data = data.without_columns(&config.excluded_features())?;
    let reps: Vec<Repetition<T>> = (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            run_one(&data, &task, config, r, hook)
                .map_err(|e| Error::Repetition { index: r, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;

    let k = task.n_classes();
    let overall_accuracy: Vec<f64> = reps.iter().map(|r| r.overall).collect();
    let class_accuracy: Vec<Vec<Option<f64>>> =
        (0..k).map(|c| reps.iter().map(|r| r.per_class[c]).collect()).collect();
    let overall_interval = summarize_interval(&overall_accuracy).ok();
    let class_intervals = class_accuracy
        .iter()
        .map(|v| summarize_interval(&v.iter().flatten().copied().collect::<Vec<_>>()).ok())
        .collect();
    let permutation_importance = config
        .permutation_importance
        .then(|| reps.iter().map(|r| r.permutation.clone().unwrap_or_default()).collect());

    let mut extras = Vec::with_capacity(reps.len());
    let mut test_class_counts = Vec::with_capacity(reps.len());
    let mut mdg = Vec::with_capacity(reps.len());
    for r in reps {
        test_class_counts.push(r.counts);
        mdg.push(r.mdg);
        extras.push(r.extra);
    }
    let result = ExperimentResult {
        task: config.task,
        class_names: task.class_names.clone(),
        feature_names: data.schema().names(),
        repetitions: config.repetitions,
        seed: config.seed,
        overall_accuracy,
        class_accuracy,
        test_class_counts,
        mdg,
        permutation_importance,
        overall_interval,
        class_intervals,
    };
    Ok((result, extras))
}

pub fn run_experiment(data: &Dataset, config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(data, config, &|_, _| Ok(())).map(|(r, _)| r)
}
