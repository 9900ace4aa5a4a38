//! Command implementations behind the `mode-forest` binary.
//!
//! Every command writes plain CSV/JSON outputs and records a [`RunManifest`]
//! in `manifest.json` inside its output directory. A directory holds a single
//! manifest file; each command/output pair gets its own entry in it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    correlation_matrix, describe, distance_histogram, load_csv, write_csv, Dataset, FeatureSchema, TravelMode,
};
use crate::error::{Error, Result};
use crate::eval::{run_experiment, ExperimentConfig, ExperimentResult, IntervalSummary, TaskId};
use crate::interpret::{grid, importance_report, pdp_with_result, ImportanceReport, PdpCurve};
use crate::rng::RNG_ALGORITHM;
use crate::synth::{generate, SynthConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENV_PREFIX: &str = "MODEFOREST_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub software_version: String,
    pub rng_algorithm: String,
    pub seed: Option<u64>,
    /// Fully resolved settings of the command.
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ManifestFile {
    entries: BTreeMap<String, RunManifest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Directory holding `path`, created if missing.
fn output_dir(path: &Path) -> Result<PathBuf> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

struct ManifestBuilder {
    command: &'static str,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    started_at: String,
}

impl ManifestBuilder {
    fn start(command: &'static str, seed: Option<u64>, config: impl Serialize) -> Result<Self> {
        Ok(ManifestBuilder {
            command,
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            started_at: now(),
        })
    }

    fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(self)
    }

    /// Hashes `outputs` (all in `dir`) and merges the entry into the
    /// directory's manifest. The entry key is the command plus its first output.
    fn finish(self, dir: &Path, outputs: &[PathBuf]) -> Result<RunManifest> {
        let mut hashes = BTreeMap::new();
        for o in outputs {
            hashes.insert(file_name(o), sha256_file(o)?);
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: hashes,
            started_at: self.started_at,
            finished_at: now(),
        };
        let path = dir.join(MANIFEST_FILE);
        let mut file: ManifestFile = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("existing {} is unreadable: {e}", path.display())))?,
            Err(_) => ManifestFile::default(),
        };
        let key = format!("{}:{}", self.command, outputs.first().map(|o| file_name(o)).unwrap_or_default());
        file.entries.insert(key, manifest.clone());
        fs::write(&path, serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(manifest)
    }
}

/// Reads every entry of the manifest in `dir`.
pub fn read_manifest(dir: &Path) -> Result<BTreeMap<String, RunManifest>> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    Ok(serde_json::from_str::<ManifestFile>(&text)?.entries)
}

/// Rounds to 4 decimals for table output.
pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthOutcome {
    pub rows: usize,
    pub mode_counts: [usize; 4],
    pub manifest: RunManifest,
}

/// Generates a dataset from `config_path` (or the built-in calibration) and
/// writes it as CSV. `seed` overrides the config's seed.
pub fn cmd_synth(config_path: Option<&Path>, out_path: &Path, seed: Option<u64>) -> Result<SynthOutcome> {
    let mut config = match config_path {
        Some(p) => SynthConfig::from_json(&fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let builder = ManifestBuilder::start("synth", Some(config.seed), &config)?;
    let builder = match config_path {
        Some(p) => builder.input(p)?,
        None => builder,
    };
    let data = generate(&config)?;
    let out_dir = output_dir(out_path)?;
    write_csv(out_path, &data)?;
    let manifest = builder.finish(&out_dir, &[out_path.to_path_buf()])?;
    Ok(SynthOutcome { rows: data.n_rows(), mode_counts: data.mode_counts(), manifest })
}

/// Experiment settings that can come from the command line, the environment
/// or a JSON config file. Unset fields fall through to the next source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub trees: Option<usize>,
    pub mtry: Option<usize>,
    pub exclude: Option<Vec<String>>,
    pub min_leaf_size: Option<usize>,
    pub max_depth: Option<usize>,
    pub train_fraction: Option<f64>,
    pub threads: Option<usize>,
    pub permutation_importance: Option<bool>,
}

impl RunOptions {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` win; unset fields are taken from `fallback`.
    pub fn or(self, fallback: RunOptions) -> RunOptions {
        RunOptions {
            seed: self.seed.or(fallback.seed),
            reps: self.reps.or(fallback.reps),
            trees: self.trees.or(fallback.trees),
            mtry: self.mtry.or(fallback.mtry),
            exclude: self.exclude.or(fallback.exclude),
            min_leaf_size: self.min_leaf_size.or(fallback.min_leaf_size),
            max_depth: self.max_depth.or(fallback.max_depth),
            train_fraction: self.train_fraction.or(fallback.train_fraction),
            threads: self.threads.or(fallback.threads),
            permutation_importance: self.permutation_importance.or(fallback.permutation_importance),
        }
    }

    pub fn experiment_config(&self, task: TaskId) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(task);
        if let Some(s) = self.seed {
            c.seed = s;
            c.forest.seed = s;
        }
        if let Some(r) = self.reps {
            c.repetitions = r;
        }
        if let Some(t) = self.trees {
            c.forest.n_trees = t;
        }
        c.forest.mtry = self.mtry.or(c.forest.mtry);
        if let Some(e) = &self.exclude {
            c.exclude = e.clone();
        }
        if let Some(m) = self.min_leaf_size {
            c.forest.min_leaf_size = m;
        }
        c.forest.max_depth = self.max_depth.or(c.forest.max_depth);
        if let Some(f) = self.train_fraction {
            c.train_fraction = f;
        }
        if let Some(p) = self.permutation_importance {
            c.permutation_importance = p;
        }
        c
    }

    /// Runs `f` on a pool capped at `threads` workers (rayon's default if unset).
    pub fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

#[derive(Debug, Serialize)]
struct RunSnapshot<'a> {
    data: String,
    task: TaskId,
    experiment: &'a ExperimentConfig,
}

/// One line of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub class: String,
    pub interval: IntervalSummary,
}

/// Overall row first, then one row per class, for the chosen interval kind.
pub fn summary_rows(result: &ExperimentResult, percentile: bool) -> Vec<SummaryRow> {
    let pick = |p: &crate::eval::IntervalPair| if percentile { p.percentile } else { p.normal };
    let mut rows = Vec::new();
    let single = |mean: f64| IntervalSummary {
        mean,
        lower: mean,
        upper: mean,
        method: if percentile {
            crate::eval::IntervalMethod::EmpiricalPercentile
        } else {
            crate::eval::IntervalMethod::NormalApproxOfMean
        },
    };
    let overall = result
        .overall_interval
        .as_ref()
        .map(pick)
        .unwrap_or_else(|| single(result.mean_overall_accuracy()));
    rows.push(SummaryRow { class: "Overall".into(), interval: overall });
    for (c, name) in result.class_names.iter().enumerate() {
        let interval = match &result.class_intervals[c] {
            Some(p) => pick(p),
            None => {
                let seen: Vec<f64> = result.class_accuracy[c].iter().flatten().copied().collect();
                if seen.is_empty() {
                    continue;
                }
                single(seen.iter().sum::<f64>() / seen.len() as f64)
            }
        };
        rows.push(SummaryRow { class: name.clone(), interval });
    }
    rows
}

fn write_summary(path: &Path, task: TaskId, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["task", "class", "mean", "lower", "upper", "method"])?;
    for r in rows {
        w.write_record([
            task.to_string(),
            r.class.clone(),
            fmt4(r.interval.mean),
            fmt4(r.interval.lower),
            fmt4(r.interval.upper),
            r.interval.method.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_PERCENTILE_FILE: &str = "summary_percentile.csv";
pub const RESULT_FILE: &str = "result.json";

#[derive(Debug)]
pub struct RunOutcome {
    pub result: ExperimentResult,
    pub manifest: RunManifest,
}

/// Runs the repeated protocol for `task` and writes `summary.csv`
/// (normal-approximation intervals), `summary_percentile.csv`, `result.json`
/// and the manifest into `out_dir`.
pub fn cmd_run(data_path: &Path, task: TaskId, options: &RunOptions, out_dir: &Path) -> Result<RunOutcome> {
    let config = options.experiment_config(task);
    let snapshot = RunSnapshot { data: data_path.display().to_string(), task, experiment: &config };
    let builder = ManifestBuilder::start("run", Some(config.seed), &snapshot)?.input(data_path)?;
    let data = load_csv(data_path, &FeatureSchema::canonical())?;
    let result = options.with_pool(|| run_experiment(&data, &config))??;
    write_run_outputs(&result, out_dir).and_then(|outputs| {
        let manifest = builder.finish(out_dir, &outputs)?;
        Ok(RunOutcome { result, manifest })
    })
}

fn write_run_outputs(result: &ExperimentResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let summary = out_dir.join(SUMMARY_FILE);
    let percentile = out_dir.join(SUMMARY_PERCENTILE_FILE);
    let json = out_dir.join(RESULT_FILE);
    write_summary(&summary, result.task, &summary_rows(result, false))?;
    write_summary(&percentile, result.task, &summary_rows(result, true))?;
    fs::write(&json, serde_json::to_string_pretty(result)? + "\n")?;
    Ok(vec![summary, percentile, json])
}

/// Reads a `result.json` and writes the relative importance table.
pub fn cmd_importance(result_path: &Path, out_path: &Path) -> Result<ImportanceReport> {
    let builder = ManifestBuilder::start("importance", None, serde_json::json!({ "result": result_path.display().to_string() }))?
        .input(result_path)?;
    let result: ExperimentResult = serde_json::from_str(&fs::read_to_string(result_path)?)
        .map_err(|e| Error::invalid(format!("malformed result file: {e}")))?;
    let report = importance_report(&result)?;
    let out_dir = output_dir(out_path)?;
    write_importance(&report, out_path)?;
    builder.finish(&out_dir, &[out_path.to_path_buf()])?;
    Ok(report)
}

pub fn write_importance(report: &ImportanceReport, out_path: &Path) -> Result<()> {
    let mut w = csv_writer(out_path)?;
    w.write_record(["feature", "mean_mdg", "relative_pct"])?;
    for e in &report.entries {
        w.write_record([e.feature.clone(), fmt4(e.mean_mdg), format!("{:.2}", e.relative * 100.0)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpRequest {
    pub feature: String,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_step: f64,
    /// Index into the task's class list.
    pub target_class: usize,
    /// Also write one column per repetition.
    pub per_repetition: bool,
}

impl PdpRequest {
    /// Distance over `[0, 10)` km in 0.1 km steps, first class of the task.
    pub fn distance() -> Self {
        PdpRequest {
            feature: crate::data::DISTANCE.to_string(),
            grid_min: 0.0,
            grid_max: 10.0,
            grid_step: 0.1,
            target_class: 0,
            per_repetition: false,
        }
    }
}

#[derive(Debug, Serialize)]
struct PdpSnapshot<'a> {
    data: String,
    task: TaskId,
    request: &'a PdpRequest,
    experiment: &'a ExperimentConfig,
}

/// Partial dependence of the task's `target_class` on one feature, averaged
/// over repetitions, written as `grid,probability[,rep_0,...]`.
pub fn cmd_pdp(
    data_path: &Path,
    task: TaskId,
    request: &PdpRequest,
    options: &RunOptions,
    out_path: &Path,
) -> Result<PdpCurve> {
    let config = options.experiment_config(task);
    let snapshot = PdpSnapshot { data: data_path.display().to_string(), task, request, experiment: &config };
    let builder = ManifestBuilder::start("pdp", Some(config.seed), &snapshot)?.input(data_path)?;
    let g = grid(request.grid_min, request.grid_max, request.grid_step)?;
    let data = load_csv(data_path, &FeatureSchema::canonical())?;
    let (_, curve) =
        options.with_pool(|| pdp_with_result(&data, &config, &request.feature, &g, request.target_class))??;

    let out_dir = output_dir(out_path)?;
    let mut w = csv_writer(out_path)?;
    let mut header = vec![request.feature.clone(), "probability".to_string()];
    if request.per_repetition {
        header.extend((0..curve.per_repetition.len()).map(|r| format!("rep_{r}")));
    }
    w.write_record(&header)?;
    for (i, x) in curve.grid.iter().enumerate() {
        let mut rec = vec![format!("{x}"), fmt4(curve.mean[i])];
        if request.per_repetition {
            rec.extend(curve.per_repetition.iter().map(|c| fmt4(c[i])));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    builder.finish(&out_dir, &[out_path.to_path_buf()])?;
    Ok(curve)
}

pub const DESCRIPTIVE_FILE: &str = "descriptive.csv";
pub const CORRELATION_FILE: &str = "correlation.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";

/// Column order of the descriptive table.
pub const DESCRIBE_MODE_ORDER: [TravelMode; 4] =
    [TravelMode::Car, TravelMode::PublicTransport, TravelMode::Cycling, TravelMode::Walking];

/// Writes the descriptive tables of a dataset into `out_dir`. The correlation
/// table skips constant columns; the histogram uses 0.5 km bins below 10 km.
pub fn cmd_describe(data_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let builder =
        ManifestBuilder::start("describe", None, serde_json::json!({ "data": data_path.display().to_string() }))?
            .input(data_path)?;
    let data = load_csv(data_path, &FeatureSchema::canonical())?;
    fs::create_dir_all(out_dir)?;
    let outputs = vec![out_dir.join(DESCRIPTIVE_FILE), out_dir.join(CORRELATION_FILE), out_dir.join(HISTOGRAM_FILE)];
    write_descriptive(&data, &outputs[0])?;
    write_correlation(&data, &outputs[1])?;
    write_histogram(&data, &outputs[2])?;
    builder.finish(out_dir, &outputs)?;
    Ok(outputs)
}

fn write_descriptive(data: &Dataset, path: &Path) -> Result<()> {
    let summary = describe(data)?;
    let mut w = csv_writer(path)?;
    let mut header = vec!["variable".to_string()];
    header.extend(DESCRIBE_MODE_ORDER.iter().map(|m| m.as_str().to_string()));
    header.push("overall".into());
    w.write_record(&header)?;
    for (j, col) in summary.columns.iter().enumerate() {
        let mut rec = vec![col.clone()];
        for m in DESCRIBE_MODE_ORDER {
            rec.push(summary.mode(m).means.as_ref().map(|v| fmt4(v[j])).unwrap_or_default());
        }
        rec.push(fmt4(summary.overall[j]));
        w.write_record(&rec)?;
    }
    let mut rec = vec!["observations".to_string()];
    rec.extend(DESCRIBE_MODE_ORDER.iter().map(|&m| summary.mode(m).count.to_string()));
    rec.push(summary.n_rows.to_string());
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}

fn write_correlation(data: &Dataset, path: &Path) -> Result<()> {
    let columns: Vec<String> = data
        .schema()
        .names()
        .into_iter()
        .enumerate()
        .filter(|&(j, _)| {
            let first = data.column(j).next();
            data.column(j).any(|v| Some(v) != first)
        })
        .map(|(_, n)| n)
        .collect();
    let mut w = csv_writer(path)?;
    let mut header = vec!["variable".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    if !columns.is_empty() {
        let m = correlation_matrix(data, &columns)?;
        for (name, row) in columns.iter().zip(&m) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|&v| fmt4(v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_histogram(data: &Dataset, path: &Path) -> Result<()> {
    let h = distance_histogram(data, 10.0, 0.5)?;
    let mut w = csv_writer(path)?;
    let mut header = vec!["bin_start_km".to_string(), "bin_end_km".to_string()];
    header.extend(TravelMode::ALL.iter().map(|m| m.as_str().to_string()));
    w.write_record(&header)?;
    for (b, start) in h.bin_starts.iter().enumerate() {
        let end = (start + h.bin_width_km).min(h.max_km);
        let mut rec = vec![format!("{start}"), format!("{end}")];
        rec.extend(TravelMode::ALL.iter().map(|&m| h.mode_counts(m)[b].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Prints a summary table to `out` in a fixed-width layout.
pub fn print_summary(out: &mut impl Write, result: &ExperimentResult) -> std::io::Result<()> {
    writeln!(out, "{} ({} repetitions)", result.task, result.repetitions)?;
    writeln!(out, "{:<20} {:>8} {:>8} {:>8}", "class", "mean", "lower", "upper")?;
    for r in summary_rows(result, false) {
        writeln!(
            out,
            "{:<20} {:>8} {:>8} {:>8}",
            r.class,
            fmt4(r.interval.mean),
            fmt4(r.interval.lower),
            fmt4(r.interval.upper)
        )?;
    }
    Ok(())
}
