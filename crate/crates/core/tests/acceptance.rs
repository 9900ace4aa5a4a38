//! Acceptance battery. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use mode_forest::cli::{cmd_run, RunOptions};
use mode_forest::data::{write_csv, Dataset};
use mode_forest::eval::{balance, summarize_interval, ExperimentConfig, ExperimentResult, TaskId};
use mode_forest::forest::Sampling;
use mode_forest::interpret::{
    first_downward_crossing, grid, importance_report, pdp_with_result, spearman, ImportanceReport,
};
use mode_forest::rng::{substream, Domain};
use mode_forest::synth::{generate, SynthConfig};
use mode_forest::{best_split, gini_impurity, ForestModel, ForestParams, MatrixView};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn c1_split_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(2024, Domain::Permutation, 0);
    let instances = 400;
    let mut mismatches = 0;
    let mut splits_found = 0;
    for _ in 0..instances {
        let n = rng.random_range(1..=50usize);
        let p = rng.random_range(1..=6usize);
        let k = rng.random_range(2..=4usize);
        let coarse = rng.random_bool(0.6);
        let x: Vec<f64> = (0..n * p)
            .map(|_| if coarse { rng.random_range(0..5) as f64 * 0.5 } else { rng.random_range(-10.0..10.0) })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let rows: Vec<usize> = (0..rng.random_range(1..=n)).map(|_| rng.random_range(0..n)).collect();
        let mut features: Vec<usize> = (0..p).filter(|_| rng.random_bool(0.6)).collect();
        if features.is_empty() {
            features.push(rng.random_range(0..p));
        }
        let min_leaf = rng.random_range(1..=3usize);
        let view = MatrixView::new(&x, p).unwrap();
        let got = best_split(view, &labels, k, &rows, &features, min_leaf)
            .map(|c| (c.feature_index, c.threshold, c.impurity_decrease));
        let want = common::brute_force_split(&x, p, &labels, k, &rows, &features, min_leaf);
        splits_found += usize::from(want.is_some());
        if got != want {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("{instances} instances ({splits_found} with a split), {mismatches} mismatches, {secs:.2} s"),
    )
}

fn c2_gini() -> Outcome {
    // 1 - (280² + 261² + 259² + 2199²) / 2999² = 3944798 / 8994001
    let cases: [(&[u32], f64); 3] =
        [(&[10, 0], 0.0), (&[5, 5], 0.5), (&[280, 261, 259, 2199], 3_944_798.0 / 8_994_001.0)];
    let mut worst: f64 = 0.0;
    for (counts, want) in cases {
        worst = worst.max((gini_impurity(counts).unwrap() - want).abs());
    }
    outcome(worst <= 1e-12, format!("max abs error {worst:.1e} (table counts -> {:.12})", cases[2].1))
}

fn c3_votes(data: &Dataset) -> Outcome {
    let spec = TaskId::T1.spec();
    let balanced = balance(data, &spec, &mut substream(3, Domain::Repetition, 0)).unwrap();
    let labels = spec.labels(&balanced).unwrap();
    let params = ForestParams { n_trees: 50, seed: 3, ..ForestParams::default() };
    let model = ForestModel::fit(balanced.matrix(), &labels, 2, balanced.schema(), &params).unwrap();
    let rows = 1000.min(balanced.n_rows());
    let mut agree = 0;
    let mut ties = 0;
    for i in 0..rows {
        let row = balanced.row(i);
        let votes = model.votes(row).unwrap();
        ties += usize::from(votes[0] == votes[1]);
        agree += usize::from(model.predict(row).unwrap() == common::tally(&model, row));
    }
    outcome(agree == rows, format!("{agree}/{rows} rows agree, {ties} tied votes resolved to the lower class"))
}

fn c4_intervals() -> Outcome {
    let s = summarize_interval(&[0.7, 0.8, 0.9]).unwrap();
    let ok_bounds = (s.normal.lower - 0.6868).abs() < 1e-4 && (s.normal.upper - 0.9132).abs() < 1e-4;
    let c = summarize_interval(&[0.42; 10]).unwrap();
    let ok_const = c.normal.upper - c.normal.lower == 0.0 && c.percentile.upper - c.percentile.lower == 0.0;
    outcome(
        ok_bounds && ok_const,
        format!("[{:.4}, {:.4}], constant width {}", s.normal.lower, s.normal.upper, c.normal.upper - c.normal.lower),
    )
}

fn c5_balancing(data: &Dataset) -> Outcome {
    let mut rng = substream(42, Domain::Repetition, 0);
    let t1 = TaskId::T1.spec();
    let b1 = balance(data, &t1, &mut rng).unwrap();
    let mut per_class = [0usize; 2];
    for l in t1.labels(&b1).unwrap() {
        per_class[l] += 1;
    }
    let b4 = balance(data, &TaskId::T4.spec(), &mut rng).unwrap();
    let c4 = b4.mode_counts();
    outcome(per_class == [541, 541] && c4 == [259; 4], format!("T1 {per_class:?}, T4 {c4:?}"))
}

fn c6_relative_importance() -> Outcome {
    let cases = [("french", 19.4, 151.0, 12.8), ("n_bikes", 13.0, 57.9, 22.5), ("age_years", 15.9, 18.8, 84.5)];
    let mut worst: f64 = 0.0;
    let mut got = Vec::new();
    for (name, value, max, want) in cases {
        let names = vec!["top".to_string(), name.to_string()];
        let report = ImportanceReport::from_means(&names, &[max, value]).unwrap();
        let pct = report.get(name).unwrap().relative * 100.0;
        worst = worst.max((pct - want).abs());
        got.push(format!("{pct:.2}%"));
    }
    outcome(worst <= 0.1, format!("{} (max deviation {worst:.3} pp)", got.join(", ")))
}

struct Battery {
    results: Vec<ExperimentResult>,
    t1_json: Vec<u8>,
    pdp: Option<(f64, Option<f64>)>,
    secs: f64,
}

fn run_battery(data_path: &std::path::Path, out: &std::path::Path, data: &Dataset) -> Battery {
    let start = Instant::now();
    let options = RunOptions { threads: Some(1), ..RunOptions::default() };
    let mut results = Vec::new();
    for task in TaskId::ALL {
        let run = cmd_run(data_path, task, &options, &out.join(task.to_string())).unwrap();
        results.push(run.result);
    }
    let t1_json = fs::read(out.join("T1/result.json")).unwrap();
    let g = grid(0.0, 10.0, 0.1).unwrap();
    let pdp = pdp_with_result(data, &ExperimentConfig::new(TaskId::T1), "distance_km", &g, 0)
        .ok()
        .map(|(_, curve)| (spearman(&g, &curve.mean).unwrap_or(0.0), first_downward_crossing(&g, &curve.mean, 0.5)));
    Battery { results, t1_json, pdp, secs: start.elapsed().as_secs_f64() }
}

fn c7_directional(b: &Battery) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for r in &b.results {
        if matches!(r.task, TaskId::T1 | TaskId::T2 | TaskId::T4 | TaskId::T5) {
            let top = importance_report(r).unwrap().top().unwrap().feature.clone();
            pass &= top == "distance_km";
            notes.push(format!("{} top={top}", r.task));
        }
    }
    let acc: Vec<f64> = b.results.iter().map(|r| r.mean_overall_accuracy()).collect();
    pass &= acc[0] > acc[1] && acc[1] > acc[2];
    notes.push(format!("acc T1 {:.4} > T2 {:.4} > T3 {:.4}", acc[0], acc[1], acc[2]));
    match b.pdp {
        Some((rho, crossing)) => {
            pass &= rho < -0.9 && crossing.is_some_and(|c| (0.5..=3.0).contains(&c));
            notes.push(format!(
                "pdp rho {rho:.3}, crossing {}",
                crossing.map_or("none".to_string(), |c| format!("{c:.2} km"))
            ));
        }
        None => {
            pass = false;
            notes.push("pdp failed".into());
        }
    }
    pass &= b.secs < 15.0 * 60.0;
    notes.push(format!("{:.0} s", b.secs));
    outcome(pass, notes.join("; "))
}

fn c8_threads(data_path: &std::path::Path, out: &std::path::Path, b: &Battery) -> Outcome {
    let options = RunOptions { threads: Some(2), ..RunOptions::default() };
    let dir = out.join("T1-threads2");
    cmd_run(data_path, TaskId::T1, &options, &dir).unwrap();
    let other = fs::read(dir.join("result.json")).unwrap();
    outcome(other == b.t1_json, format!("threads 1 vs 2: {} vs {} bytes", b.t1_json.len(), other.len()))
}

fn c9_consistency(b: &Battery) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for r in &b.results {
        for rep in 0..r.repetitions {
            let counts = &r.test_class_counts[rep];
            let total: usize = counts.iter().sum();
            let weighted: f64 = (0..counts.len())
                .map(|c| r.class_accuracy[c][rep].unwrap_or(0.0) * counts[c] as f64)
                .sum::<f64>()
                / total as f64;
            worst = worst.max((weighted - r.overall_accuracy[rep]).abs());
            checked += 1;
        }
    }
    outcome(worst <= 1e-12, format!("{checked} repetitions, max deviation {worst:.1e}"))
}

fn c10_memorization(data: &Dataset) -> Outcome {
    let spec = TaskId::T4.spec();
    let balanced = balance(data, &spec, &mut substream(10, Domain::Repetition, 0)).unwrap();
    let labels = spec.labels(&balanced).unwrap();
    let p = balanced.n_features();
    let params =
        ForestParams { n_trees: 1, mtry: Some(p), sampling: Sampling::Identity, ..ForestParams::default() };
    let model = ForestModel::fit(balanced.matrix(), &labels, 4, balanced.schema(), &params).unwrap();
    let pred = model.predict_all(balanced.matrix()).unwrap();
    let correct = pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
    outcome(
        correct == labels.len(),
        format!("{correct}/{} training rows, {} leaves", labels.len(), model.trees[0].n_leaves()),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&SynthConfig::default()).unwrap();
    let data_path = dir.path().join("synthetic.csv");
    write_csv(&data_path, &data).unwrap();

    let mut report: Vec<(&str, Outcome)> = vec![
        ("C1 split search matches brute-force oracle", c1_split_oracle()),
        ("C2 gini reference values", c2_gini()),
        ("C3 forest votes match external tally", c3_votes(&data)),
        ("C4 interval math", c4_intervals()),
        ("C5 balancing sizes", c5_balancing(&data)),
        ("C6 relative importance from reference MDG means", c6_relative_importance()),
    ];
    let battery = run_battery(&data_path, dir.path(), &data);
    report.push(("C7 directional reproduction (seed 42, 100 reps, 500 trees)", c7_directional(&battery)));
    report.push(("C8 result JSON independent of thread count", c8_threads(&data_path, dir.path(), &battery)));
    report.push(("C9 overall accuracy equals weighted per-class accuracy", c9_consistency(&battery)));
    report.push(("C10 full tree memorizes training data", c10_memorization(&data)));

    let mut failed = 0;
    for (name, o) in &report {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", report.len() - failed, report.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
