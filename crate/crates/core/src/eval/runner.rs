use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{DatasetSource, ExperimentConfig};
use super::report::{aggregate, comparison_csv, comparison_table, trace_csv, AggregateReport, RunKey, RunReport, TaskRecord};
use super::{account_strategy_bytes, compute_gap, evaluate, time_task, AccuracyMatrix};
use crate::codec::sha256_hex;
use crate::data::{load_csv, PreparedDataset};
use crate::error::{Error, Result};
use crate::model::{init_model, train_task, ModelSnapshot};
use crate::rng::{derive_seed, rng_for};
use crate::scenarios::{
    build_class_groups, build_scenario1, build_scenario2, build_scenario3, eval_set, permute_classes, ScenarioKind,
    StreamManifest, TaskStream,
};
use crate::strategies::{Strategy, StrategyConfig};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Concurrent runs; 0 means one.
    pub workers: usize,
    /// Stop every run once this many tasks are complete (checkpoints stay
    /// on disk for a later resume).
    pub stop_after_task: Option<usize>,
    /// Where prepared datasets are cached between experiments.
    pub cache_dir: Option<PathBuf>,
}

/// Fixed file layout under an experiment's output directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn dataset_manifest(&self) -> PathBuf {
        self.root.join("dataset_manifest.json")
    }

    pub fn aggregate(&self) -> PathBuf {
        self.root.join("aggregate.json")
    }

    pub fn comparison_txt(&self) -> PathBuf {
        self.root.join("comparison.txt")
    }

    pub fn comparison_csv(&self) -> PathBuf {
        self.root.join("comparison.csv")
    }

    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.json")
    }

    pub fn run_dir(&self, strategy: &StrategyConfig, seed: u64, permutation: u64) -> PathBuf {
        let slug = match strategy {
            StrategyConfig::Joint => "joint",
            StrategyConfig::Cumulative => "cumulative",
            StrategyConfig::FineTune => "fine_tune",
            StrategyConfig::Er { .. } => "er",
            StrategyConfig::Ewc { .. } => "ewc",
            StrategyConfig::Lwf { .. } => "lwf",
            StrategyConfig::Derpp { .. } => "derpp",
        };
        self.root.join("runs").join(slug).join(format!("seed-{seed}_perm-{permutation}"))
    }
}

const STREAM_FILE: &str = "stream.json";
const CHECKPOINT_FILE: &str = "checkpoint.bin";
const STRATEGY_FILE: &str = "strategy.bin";
const PROGRESS_FILE: &str = "progress.json";
const REPORT_FILE: &str = "report.json";
const ACCURACY_FILE: &str = "accuracy.csv";
const SMOOTHED_ACCURACY_FILE: &str = "accuracy_smoothed.csv";
const TRACE_FILE: &str = "trace.csv";

/// Writes through a temporary file so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads or prepares the dataset a config names. Derived datasets are
/// cached under `cache_dir` keyed by the source description (and CSV bytes).
pub fn load_dataset(source: &DatasetSource, cache_dir: Option<&Path>) -> Result<PreparedDataset> {
    let key = || -> Result<String> {
        let mut text = serde_json::to_string(source).expect("source serializes");
        if let DatasetSource::Csv { path, .. } = source {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            text.push_str(&sha256_hex(&bytes));
        }
        Ok(sha256_hex(text.as_bytes()))
    };
    let build = || -> Result<PreparedDataset> {
        match source {
            DatasetSource::Prepared { dir } => PreparedDataset::load(dir),
            DatasetSource::Csv { path, schema, prepare } => PreparedDataset::prepare(&load_csv(path, schema)?, *prepare),
            DatasetSource::Synthetic { spec, prepare } => PreparedDataset::prepare(&spec.generate(), *prepare),
        }
    };
    match (source, cache_dir) {
        (DatasetSource::Prepared { .. }, _) | (_, None) => build(),
        (_, Some(cache)) => {
            let dir = cache.join(key()?);
            if dir.join(crate::data::PREPARED_FILE).exists() {
                return PreparedDataset::load(&dir);
            }
            let ds = build()?;
            ds.save(&dir)?;
            Ok(ds)
        }
    }
}

/// The task stream of `kind` for class-order (or session-order) seed
/// `permutation`.
pub fn build_stream(kind: &ScenarioKind, dataset: &PreparedDataset, permutation: u64) -> Result<TaskStream> {
    let order = permute_classes(&dataset.drivers(), permutation);
    let mut stream = match kind {
        ScenarioKind::TwoNewDrivers => build_scenario1(dataset, &order)?,
        ScenarioKind::OneNewDriver => build_scenario2(dataset, &order)?,
        ScenarioKind::TwoNewSessions => build_scenario3(dataset, permutation)?,
        ScenarioKind::ClassGroups(sizes) => build_class_groups(dataset, &order, sizes)?,
        ScenarioKind::Joint => build_class_groups(dataset, &order, &[order.len()])?.joint(),
    };
    stream.seed = permutation;
    Ok(stream)
}

/// Config as echoed into reports: everything except the output location.
fn config_echo(config: &ExperimentConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Some(map) = v.as_object_mut() {
        map.remove("output_dir");
    }
    v
}

struct RunState {
    model: ModelSnapshot,
    strategy: Strategy,
    report: RunReport,
}

/// Trains and evaluates one (strategy, seed, permutation) run in `dir`,
/// continuing from the last completed task when progress is on disk.
pub fn run_single(
    config: &ExperimentConfig,
    dataset: &PreparedDataset,
    strategy_config: &StrategyConfig,
    seed: u64,
    permutation: u64,
    dir: &Path,
    stop_after_task: Option<usize>,
) -> Result<RunReport> {
    let base = build_stream(&config.scenario.kind, dataset, permutation)?;
    let stream = if *strategy_config == StrategyConfig::Joint { base.joint() } else { base };
    let manifest = stream.manifest(dataset.hash());
    let stream_path = dir.join(STREAM_FILE);
    if stream_path.exists() {
        let stored = StreamManifest::from_json(&read_text(&stream_path)?)?;
        if stored != manifest {
            return Err(Error::Corrupt(format!("{} does not match the configured stream", stream_path.display())));
        }
    } else {
        write_atomic(&stream_path, manifest.to_json().as_bytes())?;
    }

    let model_config = config.model.resolve(dataset.n_features(), dataset.drivers().len());
    model_config.validate()?;
    let smoothing_window = config.smoothing.enabled.then_some(config.smoothing.window);
    let progress_path = dir.join(PROGRESS_FILE);
    let mut state = if progress_path.exists() {
        let report: RunReport = serde_json::from_str(&read_text(&progress_path)?)
            .map_err(|e| Error::Corrupt(format!("{}: {e}", progress_path.display())))?;
        let model = ModelSnapshot::load(&dir.join(CHECKPOINT_FILE))?;
        if model.config != model_config || report.strategy != *strategy_config || report.dataset_hash != dataset.hash() {
            return Err(Error::Corrupt(format!("{} was written by a different experiment", dir.display())));
        }
        if model.active_classes != stream.seen_classes(report.tasks.len().max(1))
            && !report.tasks.is_empty()
        {
            return Err(Error::Corrupt("checkpoint classes do not match the stream".into()));
        }
        let strategy = Strategy::load(&dir.join(STRATEGY_FILE), dataset, &model)?;
        RunState { model, strategy, report }
    } else {
        let model = init_model(model_config.clone(), derive_seed(seed, "init", 0))?;
        let report = RunReport {
            key: RunKey { strategy: strategy_config.name().to_string(), seed, permutation },
            strategy: strategy_config.clone(),
            scenario: stream.kind.clone(),
            class_order: stream.permutation.clone(),
            dataset_hash: dataset.hash().to_string(),
            model: model_config,
            smoothing_window,
            complete: false,
            tasks: Vec::new(),
            accuracy: AccuracyMatrix::default(),
            smoothed_accuracy: None,
            final_acc: None,
            smoothed_final_acc: None,
            gap: None,
            smoothed_gap: None,
            time_per_task: Vec::new(),
            strategy_bytes: 0,
            config_echo: config_echo(config),
        };
        RunState { model, strategy: Strategy::new(strategy_config.clone()), report }
    };

    let test_pool = dataset.test_pool();
    let mut last_trace = None;
    for t in state.report.tasks.len()..stream.len() {
        if stop_after_task.is_some_and(|n| t >= n) {
            return Ok(state.report);
        }
        let task = &stream.tasks[t];
        let stage = |e: Error| e.at_stage(format!("{} seed {seed} perm {permutation} task {}", strategy_config.name(), task.task_id));
        let data = state.strategy.before_task(&mut state.model, task);
        let new: Vec<u32> = stream
            .seen_classes(task.task_id)
            .into_iter()
            .filter(|c| state.model.unit_of(*c).is_none())
            .collect();
        state.model.register_classes(&new).map_err(stage)?;
        let train_seed = if strategy_config.from_scratch() {
            derive_seed(seed, "train", 0)
        } else {
            derive_seed(seed, "train", task.task_id as u64)
        };
        let (log, secs) = time_task(|| train_task(&mut state.model, &data, &state.strategy, train_seed));
        let log = log.map_err(stage)?;
        let mut rng = rng_for(seed, "after-task", task.task_id as u64);
        state.strategy.after_task(&state.model, task, &mut rng).map_err(stage)?;

        let windows = eval_set(&stream, task.task_id, &test_pool).map_err(stage)?;
        let (ev, eval_seconds) = time_task(|| evaluate(&state.model, &windows, smoothing_window));
        let ev = ev.map_err(stage)?;
        state.report.tasks.push(TaskRecord {
            task_id: task.task_id,
            train_windows: data.len(),
            eval_windows: windows.len(),
            accuracy: ev.accuracy,
            smoothed_accuracy: ev.smoothed_accuracy,
            per_driver: ev.per_driver,
            smoothed_per_driver: ev.smoothed_per_driver,
            train_seconds: secs,
            eval_seconds: eval_seconds - ev.smoothing_seconds,
            smoothing_seconds: ev.smoothing_seconds,
            epoch_losses: log.epoch_losses,
        });
        state.report.strategy_bytes = account_strategy_bytes(
            &state.strategy,
            dataset.window(),
            dataset.n_features(),
            state.model.config.max_classes,
            state.model.n_params(),
        );
        state.report.refresh();
        state.model.save(&dir.join(CHECKPOINT_FILE)).map_err(stage)?;
        state.strategy.save(&dir.join(STRATEGY_FILE)).map_err(stage)?;
        let progress = serde_json::to_string_pretty(&state.report).expect("report serializes");
        write_atomic(&progress_path, progress.as_bytes())?;
        last_trace = Some(ev.trace);
        log::info!(
            "{} seed {seed} perm {permutation}: task {}/{} accuracy {:.4} ({:.1}s)",
            strategy_config.name(),
            task.task_id,
            stream.len(),
            state.report.tasks.last().map_or(0.0, |r| r.accuracy),
            secs
        );
    }
    state.report.complete = true;
    state.report.refresh();
    if let Some(trace) = last_trace {
        write_atomic(&dir.join(TRACE_FILE), trace_csv(&trace).as_bytes())?;
    }
    Ok(state.report)
}

fn job_list(config: &ExperimentConfig) -> Vec<(StrategyConfig, u64, u64)> {
    let mut jobs = Vec::new();
    for s in config.training_strategies() {
        for &seed in &config.seeds {
            for &p in &config.permutations {
                jobs.push((s.clone(), seed, p));
            }
        }
    }
    jobs
}

/// Fills each run's gap from the Joint run with the same seed and
/// permutation.
fn attach_gaps(reports: &mut [RunReport]) {
    let joint: Vec<(u64, u64, f64)> = reports
        .iter()
        .filter(|r| r.strategy == StrategyConfig::Joint && r.complete)
        .filter_map(|r| r.final_acc.map(|a| (r.key.seed, r.key.permutation, a)))
        .collect();
    for r in reports.iter_mut() {
        let reference = joint.iter().find(|j| j.0 == r.key.seed && j.1 == r.key.permutation).map(|j| j.2);
        r.gap = reference.zip(r.final_acc).map(|(j, f)| compute_gap(f, j));
        r.smoothed_gap = reference.zip(r.smoothed_final_acc).map(|(j, f)| compute_gap(f, j));
    }
}

/// Runs every (strategy, seed, permutation) job of `config` under
/// `config.output_dir` and writes the per-run and aggregate reports. Runs
/// with progress on disk continue where they stopped; completed runs are
/// not retrained.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<AggregateReport> {
    config.validate()?;
    let layout = RunLayout::new(&config.output_dir);
    let config_path = layout.config();
    if config_path.exists() {
        let stored = ExperimentConfig::from_json(&read_text(&config_path)?)?;
        if config_echo(&stored) != config_echo(config) {
            return Err(Error::Config(format!(
                "{} holds a different experiment; choose another output directory",
                layout.root.display()
            )));
        }
    }
    let dataset = load_dataset(&config.dataset, options.cache_dir.as_deref()).map_err(|e| e.at_stage("dataset"))?;
    write_atomic(&config_path, config.to_json().as_bytes())?;
    let manifest = serde_json::to_string_pretty(&dataset.manifest()).expect("manifest serializes");
    write_atomic(&layout.dataset_manifest(), manifest.as_bytes())?;

    let workers = if config.timing_serial { 1 } else { options.workers.max(1) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let jobs = job_list(config);
    let results: Vec<Result<RunReport>> = pool.install(|| {
        jobs.par_iter()
            .map(|(s, seed, p)| {
                let dir = layout.run_dir(s, *seed, *p);
                let done = dir.join(REPORT_FILE);
                if done.exists() {
                    let r: RunReport = serde_json::from_str(&read_text(&done)?)
                        .map_err(|e| Error::Corrupt(format!("{}: {e}", done.display())))?;
                    if r.complete {
                        return Ok(r);
                    }
                }
                run_single(config, &dataset, s, *seed, *p, &dir, options.stop_after_task)
            })
            .collect()
    });
    let mut reports = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(r) => reports.push(r),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let complete = first_error.is_none() && reports.iter().all(|r| r.complete);
    attach_gaps(&mut reports);

    for r in &reports {
        let dir = layout.run_dir(&r.strategy, r.key.seed, r.key.permutation);
        if r.complete {
            write_atomic(&dir.join(REPORT_FILE), serde_json::to_string_pretty(r).expect("report serializes").as_bytes())?;
            write_atomic(&dir.join(ACCURACY_FILE), r.accuracy.to_csv().as_bytes())?;
            if let Some(m) = &r.smoothed_accuracy {
                write_atomic(&dir.join(SMOOTHED_ACCURACY_FILE), m.to_csv().as_bytes())?;
            }
        }
    }
    let agg = aggregate(&reports, config.scenario.kind.clone(), dataset.hash(), config_echo(config), complete);
    write_atomic(&layout.aggregate(), agg.to_json().as_bytes())?;
    let table = std::slice::from_ref(&agg);
    write_atomic(&layout.comparison_txt(), comparison_table(table)?.as_bytes())?;
    write_atomic(&layout.comparison_csv(), comparison_csv(table)?.as_bytes())?;
    let timing: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| serde_json::json!({ "run": r.key, "time_per_task": r.time_per_task }))
        .collect();
    write_atomic(&layout.timing(), serde_json::to_string_pretty(&timing).expect("timing serializes").as_bytes())?;

    match first_error {
        Some(e) => Err(e),
        None => Ok(agg),
    }
}

/// Continues the experiment stored in `dir`.
pub fn resume_experiment(dir: &Path, options: &RunOptions) -> Result<AggregateReport> {
    let path = RunLayout::new(dir).config();
    let mut config = ExperimentConfig::from_json(&read_text(&path)?)?;
    config.output_dir = dir.to_path_buf();
    run_experiment(&config, options)
}
