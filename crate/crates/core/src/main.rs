use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use mode_forest::cli::{self, PdpRequest, RunOptions};
use mode_forest::data::TravelMode;
use mode_forest::TaskId;

/// Random-forest travel-mode experiments.
///
/// Run settings can also be given as environment variables prefixed with
/// MODEFOREST_ (for example MODEFOREST_REPS=10) or as a JSON file passed with
/// --config. Command-line flags win over the environment, which wins over the
/// config file.
#[derive(Parser)]
#[command(name = "mode-forest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Generator settings as JSON. Defaults to the built-in calibration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, env = "MODEFOREST_SEED")]
        seed: Option<u64>,
    },
    /// Run the repeated train/test protocol for one task.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: TaskId,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        options: OptionArgs,
    },
    /// Rank features by mean decrease in Gini, relative to the largest.
    Importance {
        /// A result.json written by `run`.
        #[arg(long)]
        result: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Partial dependence of one class probability on a feature.
    Pdp {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: TaskId,
        #[arg(long, default_value = "distance_km")]
        feature: String,
        #[arg(long, default_value_t = 0.0)]
        grid_min: f64,
        #[arg(long, default_value_t = 10.0)]
        grid_max: f64,
        #[arg(long, default_value_t = 0.1)]
        grid_step: f64,
        /// Class index within the task (0 is the first listed class).
        #[arg(long, default_value_t = 0)]
        class: usize,
        /// Add one column per repetition.
        #[arg(long)]
        per_rep: bool,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        options: OptionArgs,
    },
    /// Write descriptive tables for a dataset.
    Describe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct OptionArgs {
    /// JSON file with run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "MODEFOREST_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "MODEFOREST_REPS")]
    reps: Option<usize>,
    #[arg(long, env = "MODEFOREST_TREES")]
    trees: Option<usize>,
    /// Features tried per split. Defaults to floor(sqrt(p)).
    #[arg(long, env = "MODEFOREST_MTRY")]
    mtry: Option<usize>,
    /// Comma-separated predictors to drop.
    #[arg(long, env = "MODEFOREST_EXCLUDE", value_delimiter = ',')]
    exclude: Option<Vec<String>>,
    #[arg(long, env = "MODEFOREST_MIN_LEAF_SIZE")]
    min_leaf_size: Option<usize>,
    #[arg(long, env = "MODEFOREST_MAX_DEPTH")]
    max_depth: Option<usize>,
    #[arg(long, env = "MODEFOREST_TRAIN_FRACTION")]
    train_fraction: Option<f64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, env = "MODEFOREST_THREADS")]
    threads: Option<usize>,
    /// Also compute permutation importance on the test rows.
    #[arg(long, env = "MODEFOREST_PERMUTATION_IMPORTANCE")]
    permutation_importance: Option<bool>,
}

impl OptionArgs {
    fn resolve(self) -> anyhow::Result<RunOptions> {
        let file = match &self.config {
            Some(p) => RunOptions::from_json_file(p)?,
            None => RunOptions::default(),
        };
        Ok(RunOptions {
            seed: self.seed,
            reps: self.reps,
            trees: self.trees,
            mtry: self.mtry,
            exclude: self.exclude,
            min_leaf_size: self.min_leaf_size,
            max_depth: self.max_depth,
            train_fraction: self.train_fraction,
            threads: self.threads,
            permutation_importance: self.permutation_importance,
        }
        .or(file))
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    // Console output is informational; a closed stdout is not an error.
    let mut so = std::io::stdout().lock();
    match cli.command {
        Command::Synth { config, out, seed } => {
            let outcome = cli::cmd_synth(config.as_deref(), &out, seed)
                .with_context(|| format!("generating {}", out.display()))?;
            let _ = writeln!(so, "wrote {} rows to {}", outcome.rows, out.display());
            for m in TravelMode::ALL {
                let _ = writeln!(so, "  {:<17} {}", m.as_str(), outcome.mode_counts[m.index()]);
            }
        }
        Command::Run { data, task, out_dir, options } => {
            let options = options.resolve()?;
            let outcome = cli::cmd_run(&data, task, &options, &out_dir)?;
            let _ = cli::print_summary(&mut so, &outcome.result);
            let _ = writeln!(so, "outputs in {}", out_dir.display());
        }
        Command::Importance { result, out } => {
            let report = cli::cmd_importance(&result, &out)?;
            for e in &report.entries {
                let _ = writeln!(so, "{:<20} {:>10.4} {:>7.2}%", e.feature, e.mean_mdg, e.relative * 100.0);
            }
        }
        Command::Pdp { data, task, feature, grid_min, grid_max, grid_step, class, per_rep, out, options } => {
            let options = options.resolve()?;
            let request = PdpRequest {
                feature,
                grid_min,
                grid_max,
                grid_step,
                target_class: class,
                per_repetition: per_rep,
            };
            let curve = cli::cmd_pdp(&data, task, &request, &options, &out)?;
            let _ = writeln!(so, "wrote {} grid points to {}", curve.grid.len(), out.display());
        }
        Command::Describe { data, out_dir } => {
            for p in cli::cmd_describe(&data, &out_dir)? {
                let _ = writeln!(so, "wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
