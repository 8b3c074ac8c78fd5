use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{mean, std_dev, AccuracyMatrix, TraceRow};
use crate::error::{Error, Result};
use crate::model::ClassifierConfig;
use crate::scenarios::ScenarioKind;
use crate::strategies::StrategyConfig;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub strategy: String,
    pub seed: u64,
    pub permutation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub train_windows: usize,
    pub eval_windows: usize,
    pub accuracy: f64,
    pub smoothed_accuracy: Option<f64>,
    pub per_driver: BTreeMap<u32, f64>,
    pub smoothed_per_driver: Option<BTreeMap<u32, f64>>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub smoothing_seconds: f64,
    pub epoch_losses: Vec<f64>,
}

/// Everything recorded about one (strategy, seed, permutation) run.
/// Percentages are in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub key: RunKey,
    pub strategy: StrategyConfig,
    pub scenario: ScenarioKind,
    pub class_order: Vec<u32>,
    pub dataset_hash: String,
    pub model: ClassifierConfig,
    pub smoothing_window: Option<usize>,
    pub complete: bool,
    pub tasks: Vec<TaskRecord>,
    pub accuracy: AccuracyMatrix,
    pub smoothed_accuracy: Option<AccuracyMatrix>,
    pub final_acc: Option<f64>,
    pub smoothed_final_acc: Option<f64>,
    pub gap: Option<f64>,
    pub smoothed_gap: Option<f64>,
    pub time_per_task: Vec<f64>,
    pub strategy_bytes: u64,
    pub config_echo: serde_json::Value,
}

impl RunReport {
    /// Rebuilds the matrices and finals from the task records.
    pub fn refresh(&mut self) {
        let mut raw = AccuracyMatrix::default();
        let mut smooth = AccuracyMatrix::default();
        for t in &self.tasks {
            raw.push(t.accuracy, t.per_driver.clone());
            if let (Some(a), Some(pd)) = (t.smoothed_accuracy, &t.smoothed_per_driver) {
                smooth.push(a, pd.clone());
            }
        }
        self.final_acc = raw.final_value().map(|v| 100.0 * v);
        self.smoothed_final_acc = self.smoothing_window.and(smooth.final_value()).map(|v| 100.0 * v);
        self.smoothed_accuracy = self.smoothing_window.map(|_| smooth);
        self.accuracy = raw;
        self.time_per_task = self.tasks.iter().map(|t| t.train_seconds).collect();
    }
}

/// Mean and spread of one table cell across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub runs: usize,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    /// Mean final accuracy per class-order permutation.
    pub permutation_means: BTreeMap<u64, f64>,
    pub mean_of_permutation_means: f64,
    pub gap_mean: Option<f64>,
    pub gap_std: Option<f64>,
    /// Mean accuracy (percent) after each task.
    pub curve: Vec<f64>,
    pub strategy_bytes: u64,
}

/// Run-independent summary of an experiment. Holds no wall-clock data, so
/// equal inputs give byte-equal files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub scenario: ScenarioKind,
    pub dataset_hash: String,
    pub complete: bool,
    pub cells: Vec<CellSummary>,
    pub config_echo: serde_json::Value,
}

impl AggregateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("aggregate report: {e}")))
    }

    pub fn cell(&self, method: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method)
    }
}

/// Table order of methods.
const METHOD_ORDER: [&str; 9] = ["Joint", "Cumulative", "Fine-Tuning", "ER", "EWC", "LwF", "DER++", "SmooER", "SmooDER"];

fn method_rank(m: &str) -> usize {
    METHOD_ORDER.iter().position(|&o| o == m).unwrap_or(METHOD_ORDER.len())
}

/// Groups complete runs into cells. Smoothed variants form their own cells.
pub fn aggregate(
    runs: &[RunReport],
    scenario: ScenarioKind,
    dataset_hash: &str,
    config_echo: serde_json::Value,
    complete: bool,
) -> AggregateReport {
    struct Acc {
        finals: Vec<f64>,
        gaps: Vec<f64>,
        by_perm: BTreeMap<u64, Vec<f64>>,
        curves: Vec<Vec<f64>>,
        bytes: u64,
    }
    let mut cells: BTreeMap<String, Acc> = BTreeMap::new();
    let mut ordered: Vec<&RunReport> = runs.iter().filter(|r| r.complete).collect();
    ordered.sort_by(|a, b| a.key.cmp(&b.key));
    for r in ordered {
        let mut views = vec![(r.strategy.name().to_string(), r.final_acc, r.gap, &r.accuracy)];
        if let (Some(name), Some(m)) = (r.strategy.smoothed_name(), &r.smoothed_accuracy) {
            views.push((name.to_string(), r.smoothed_final_acc, r.smoothed_gap, m));
        }
        for (method, fin, gap, matrix) in views {
            let Some(fin) = fin else { continue };
            let acc = cells.entry(method).or_insert(Acc {
                finals: Vec::new(),
                gaps: Vec::new(),
                by_perm: BTreeMap::new(),
                curves: Vec::new(),
                bytes: 0,
            });
            acc.finals.push(fin);
            acc.gaps.extend(gap);
            acc.by_perm.entry(r.key.permutation).or_default().push(fin);
            acc.curves.push(matrix.values.iter().map(|v| 100.0 * v).collect());
            acc.bytes = acc.bytes.max(r.strategy_bytes);
        }
    }
    let mut cells: Vec<CellSummary> = cells
        .into_iter()
        .map(|(method, a)| {
            let permutation_means: BTreeMap<u64, f64> = a.by_perm.iter().map(|(&p, v)| (p, mean(v))).collect();
            let pm: Vec<f64> = permutation_means.values().copied().collect();
            let len = a.curves.iter().map(Vec::len).max().unwrap_or(0);
            let curve = (0..len)
                .map(|t| mean(&a.curves.iter().filter_map(|c| c.get(t).copied()).collect::<Vec<_>>()))
                .collect();
            let has_gaps = !a.gaps.is_empty() && a.gaps.len() == a.finals.len();
            CellSummary {
                method,
                runs: a.finals.len(),
                final_acc_mean: mean(&a.finals),
                final_acc_std: std_dev(&a.finals),
                permutation_means,
                mean_of_permutation_means: mean(&pm),
                gap_mean: has_gaps.then(|| mean(&a.gaps)),
                gap_std: has_gaps.then(|| std_dev(&a.gaps)),
                curve,
                strategy_bytes: a.bytes,
            }
        })
        .collect();
    cells.sort_by_key(|c| method_rank(&c.method));
    AggregateReport { scenario, dataset_hash: dataset_hash.to_string(), complete, cells, config_echo }
}

fn scenario_label(kind: &ScenarioKind) -> String {
    match kind {
        ScenarioKind::TwoNewDrivers => "Scenario 1".into(),
        ScenarioKind::OneNewDriver => "Scenario 2".into(),
        ScenarioKind::TwoNewSessions => "Scenario 3".into(),
        ScenarioKind::ClassGroups(g) => format!("Groups {g:?}"),
        ScenarioKind::Joint => "Joint".into(),
    }
}

/// Two decimals, without a sign on values that round to zero.
fn two_places(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" { "0.00".into() } else { s }
}

/// Methods as rows, one ACC/gap column pair per report (each a scenario).
fn table_rows(reports: &[AggregateReport]) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut seen = BTreeSet::new();
    for r in reports {
        if !seen.insert(scenario_label(&r.scenario)) {
            return Err(Error::Comparison(format!("two reports for {}", scenario_label(&r.scenario))));
        }
    }
    let mut header = vec!["Method".to_string()];
    for r in reports {
        let s = scenario_label(&r.scenario);
        header.push(format!("{s} ACC"));
        header.push(format!("{s} gap"));
    }
    let mut methods: Vec<&str> = reports.iter().flat_map(|r| r.cells.iter().map(|c| c.method.as_str())).collect();
    methods.sort_by_key(|m| (method_rank(m), m.to_string()));
    methods.dedup();
    let rows = methods
        .into_iter()
        .map(|m| {
            let mut row = vec![m.to_string()];
            for r in reports {
                match r.cell(m) {
                    Some(c) => {
                        row.push(two_places(c.final_acc_mean));
                        row.push(c.gap_mean.map_or("-".into(), two_places));
                    }
                    None => row.extend(["-".to_string(), "-".to_string()]),
                }
            }
            row
        })
        .collect();
    Ok((header, rows))
}

pub fn comparison_table(reports: &[AggregateReport]) -> Result<String> {
    let (header, rows) = table_rows(reports)?;
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header) + "\n";
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    Ok(out)
}

pub fn comparison_csv(reports: &[AggregateReport]) -> Result<String> {
    let (header, rows) = table_rows(reports)?;
    let mut out = header.join(",") + "\n";
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let k = trace.first().map_or(0, |r| r.logits.len());
    let mut out = String::from("driver,session,index,predicted,smoothed");
    for j in 0..k {
        out.push_str(&format!(",logit_{j}"));
    }
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.driver,
            r.session,
            r.index,
            r.predicted,
            r.smoothed.map_or(String::new(), |s| s.to_string())
        ));
        for z in &r.logits {
            out.push_str(&format!(",{z}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_zero_is_unsigned() {
        assert_eq!(two_places(-0.001), "0.00");
        assert_eq!(two_places(-0.005 - 1e-9), "-0.01");
        assert_eq!(two_places(97.899), "97.90");
    }

    #[test]
    fn duplicate_scenarios_are_rejected() {
        let r = AggregateReport {
            scenario: ScenarioKind::TwoNewDrivers,
            dataset_hash: String::new(),
            complete: true,
            cells: Vec::new(),
            config_echo: serde_json::Value::Null,
        };
        assert!(matches!(comparison_table(&[r.clone(), r]), Err(Error::Comparison(_))));
    }
}
