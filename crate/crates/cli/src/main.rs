use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drivercl::data::{load_csv, CsvSchema, PrepareOptions, PreparedDataset, SplitMode, SyntheticSpec};
use drivercl::eval::{
    comparison_csv, comparison_table, load_dataset, resume_experiment, run_experiment, AggregateReport, ExperimentConfig,
    RunLayout, RunOptions,
};
use drivercl::Error;

mod plot;

/// Continual-learning benchmark for behavior-based driver identification.
#[derive(Parser)]
#[command(name = "drivercl", version)]
struct Cli {
    /// Cache directory for prepared datasets.
    #[arg(long, global = true, env = "DRIVERCL_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Window, standardize and split a dataset.
    Prepare(PrepareArgs),
    /// Run an experiment described by a config file.
    Run(RunArgs),
    /// Continue an interrupted experiment.
    Resume {
        /// Experiment output directory.
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Render the method-by-scenario table for one or more experiments.
    Compare {
        /// Experiment directories or aggregate.json files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also write the table as CSV here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Plot accuracy-per-task and time-per-task curves.
    Plot {
        /// Experiment directories.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct PrepareArgs {
    /// Sensor-log CSV.
    #[arg(long, conflicts_with = "synthetic")]
    csv: Option<PathBuf>,
    /// Synthetic dataset as drivers,sessions,records,features,seed.
    #[arg(long, value_parser = parse_synthetic)]
    synthetic: Option<SyntheticSpec>,
    /// JSON file with the column roles (overrides the column flags).
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "Class")]
    driver_column: String,
    #[arg(long, default_value = "Session")]
    session_column: String,
    /// Comma-separated raw driver labels mapped to ids 0, 1, ...
    #[arg(long, value_delimiter = ',')]
    driver_labels: Option<Vec<String>>,
    /// Comma-separated columns to ignore.
    #[arg(long, value_delimiter = ',')]
    ignore: Vec<String>,
    #[arg(long, default_value_t = drivercl::data::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = drivercl::data::DEFAULT_STRIDE)]
    stride: usize,
    #[arg(long, default_value_t = drivercl::data::DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    /// Shuffle windows before splitting, with this seed.
    #[arg(long)]
    random_split: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides `model.epochs_per_task`.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides `smoothing.window`.
    #[arg(long)]
    smoothing_window: Option<usize>,
    /// Stop each run after this many tasks; `resume` continues it.
    #[arg(long)]
    stop_after_task: Option<usize>,
}

fn parse_synthetic(s: &str) -> Result<SyntheticSpec, String> {
    let v: Vec<u64> = s
        .split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [drivers, sessions, records, features, seed] if drivers > 0 && sessions > 0 && records > 0 && features > 0 => {
            Ok(SyntheticSpec {
                drivers: drivers as usize,
                sessions: sessions as usize,
                records: records as usize,
                features: features as usize,
                seed,
            })
        }
        _ => Err("expected five values drivers,sessions,records,features,seed with positive sizes".into()),
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
    Incomplete,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

fn prepare(args: PrepareArgs, cache: Option<&Path>) -> Result<(), Failure> {
    let options = PrepareOptions {
        window: args.window,
        stride: args.stride,
        train_fraction: args.train_fraction,
        split: args.random_split.map_or(SplitMode::Chronological, |seed| SplitMode::Random { seed }),
    };
    options.validate()?;
    let dataset = match (&args.csv, &args.synthetic) {
        (Some(path), None) => {
            let schema = match &args.schema {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<CsvSchema>(&text)
                        .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
                }
                None => {
                    let mut s = CsvSchema::new(&args.driver_column, &args.session_column);
                    s.driver_labels = args.driver_labels.clone();
                    s.ignore_columns = args.ignore.clone();
                    s
                }
            };
            if !path.exists() {
                return Err(Failure::Usage(format!("{} does not exist", path.display())));
            }
            let raw = load_csv(path, &schema).map_err(|e| e.at_stage(format!("reading {}", path.display())))?;
            PreparedDataset::prepare(&raw, options)?
        }
        (None, Some(spec)) => {
            let source = drivercl::eval::DatasetSource::Synthetic { spec: *spec, prepare: options };
            load_dataset(&source, cache)?
        }
        _ => return Err(Failure::Usage("give exactly one of --csv or --synthetic".into())),
    };
    dataset.save(&args.output)?;
    println!("prepared {} sessions, hash {}", dataset.counts().len(), dataset.hash());
    for c in dataset.counts() {
        println!("driver {} session {}: {} train / {} test", c.driver, c.session, c.train_windows, c.test_windows);
    }
    Ok(())
}

fn run(args: RunArgs, cache: Option<PathBuf>) -> Result<(), Failure> {
    if !args.config.exists() {
        return Err(Failure::Usage(format!("{} does not exist", args.config.display())));
    }
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(out) = args.output {
        config.output_dir = out;
    }
    if let Some(e) = args.epochs {
        config.model.epochs_per_task = e;
    }
    if let Some(w) = args.smoothing_window {
        config.smoothing.window = w;
    }
    config.validate()?;
    let options = RunOptions { workers: args.workers, stop_after_task: args.stop_after_task, cache_dir: cache };
    finish(run_experiment(&config, &options)?, &config.output_dir)
}

fn finish(agg: AggregateReport, dir: &Path) -> Result<(), Failure> {
    print!("{}", comparison_table(std::slice::from_ref(&agg))?);
    println!("reports written to {}", dir.display());
    if agg.complete {
        Ok(())
    } else {
        Err(Failure::Incomplete)
    }
}

fn read_aggregate(path: &Path) -> Result<AggregateReport, Failure> {
    let file = if path.is_dir() { RunLayout::new(path).aggregate() } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    Ok(AggregateReport::from_json(&text)?)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cache = cli.cache_dir;
    match cli.command {
        Command::Prepare(args) => prepare(args, cache.as_deref()),
        Command::Run(args) => run(args, cache),
        Command::Resume { dir, workers } => {
            if !RunLayout::new(&dir).config().exists() {
                return Err(Failure::Usage(format!("{} holds no experiment", dir.display())));
            }
            let options = RunOptions { workers, stop_after_task: None, cache_dir: cache };
            finish(resume_experiment(&dir, &options)?, &dir)
        }
        Command::Compare { reports, output } => {
            let aggs = reports.iter().map(|p| read_aggregate(p)).collect::<Result<Vec<_>, _>>()?;
            print!("{}", comparison_table(&aggs)?);
            if let Some(out) = output {
                std::fs::write(&out, comparison_csv(&aggs)?).map_err(|e| Error::io(&out, e))?;
            }
            Ok(())
        }
        Command::Plot { reports, output } => {
            let written = plot::plot(&reports, &output)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            log::error!("{e}");
            ExitCode::from(1)
        }
        Err(Failure::Incomplete) => {
            log::warn!("stopped before all runs completed");
            ExitCode::from(3)
        }
    }
}
