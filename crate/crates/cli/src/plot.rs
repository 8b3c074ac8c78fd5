use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use drivercl::eval::{AggregateReport, RunLayout, RunReport};
use drivercl::{Error, Result};
use plotters::prelude::*;

/// One plotted line: (label, points).
type Series = (String, Vec<(usize, f64)>);
/// (experiment, method, points).
type LabeledSeries = (String, String, Vec<(usize, f64)>);

fn load_runs(dir: &Path) -> Result<Vec<RunReport>> {
    let mut out = Vec::new();
    let runs = dir.join("runs");
    let Ok(strategies) = std::fs::read_dir(&runs) else { return Ok(out) };
    let mut paths: Vec<PathBuf> = Vec::new();
    for s in strategies {
        let s = s.map_err(|e| Error::io(&runs, e))?.path();
        for r in std::fs::read_dir(&s).map_err(|e| Error::io(&s, e))? {
            paths.push(r.map_err(|e| Error::io(&s, e))?.path().join("report.json"));
        }
    }
    paths.sort();
    for p in paths.into_iter().filter(|p| p.exists()) {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        out.push(serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", p.display())))?);
    }
    Ok(out)
}

/// Mean training (plus smoothing, for smoothed variants) seconds per task.
fn time_series(runs: &[RunReport]) -> Vec<Series> {
    let mut acc: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.complete) {
        let train: Vec<f64> = r.tasks.iter().map(|t| t.train_seconds).collect();
        acc.entry(r.strategy.name().to_string()).or_default().push(train.clone());
        if let (Some(name), Some(_)) = (r.strategy.smoothed_name(), r.smoothing_window) {
            let smooth = r.tasks.iter().zip(&train).map(|(t, s)| s + t.smoothing_seconds).collect();
            acc.entry(name.to_string()).or_default().push(smooth);
        }
    }
    acc.into_iter()
        .map(|(name, series)| {
            let len = series.iter().map(Vec::len).max().unwrap_or(0);
            let points = (0..len)
                .map(|t| {
                    let vals: Vec<f64> = series.iter().filter_map(|s| s.get(t).copied()).collect();
                    (t + 1, vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            (name, points)
        })
        .collect()
}

fn write_points(path: &Path, value: &str, series: &[LabeledSeries]) -> Result<()> {
    let mut out = format!("experiment,method,task,{value}\n");
    for (exp, method, points) in series {
        for (t, v) in points {
            out.push_str(&format!("{exp},{method},{t},{v}\n"));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn draw(path: &Path, title: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let max_t = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).max().unwrap_or(1).max(2);
    let max_y = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).fold(0.0f64, f64::max);
    let y_top = if y_label.starts_with("accuracy") { 100.0 } else { (max_y * 1.1).max(1e-3) };
    let render = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(1usize..max_t, 0.0..y_top)?;
        chart.configure_mesh().x_desc("task").y_desc(y_label).draw()?;
        for (i, (name, points)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            chart.draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))?;
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
        root.present()?;
        Ok(())
    };
    render().map_err(|e| Error::Corrupt(format!("rendering {}: {e}", path.display())))
}

/// Writes accuracy and time-per-task plots plus their point CSVs into
/// `out`; returns the written paths.
pub fn plot(dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if dirs.is_empty() {
        return Err(Error::Config("no reports to plot".into()));
    }
    let mut experiments = Vec::new();
    for d in dirs {
        let path = RunLayout::new(d).aggregate();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let agg = AggregateReport::from_json(&text)?;
        let name = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
        experiments.push((name, agg, load_runs(d)?));
    }
    let scenario = &experiments[0].1.scenario;
    if let Some((name, agg, _)) = experiments.iter().find(|(_, a, _)| a.scenario != *scenario) {
        return Err(Error::Comparison(format!(
            "{name} is {:?} but {} is {scenario:?}",
            agg.scenario, experiments[0].0
        )));
    }
    let label = |exp: &str, method: &str| {
        if experiments.len() > 1 {
            format!("{exp}: {method}")
        } else {
            method.to_string()
        }
    };

    let mut acc_rows = Vec::new();
    let mut time_rows = Vec::new();
    for (name, agg, runs) in &experiments {
        for c in &agg.cells {
            let points = c.curve.iter().enumerate().map(|(t, v)| (t + 1, *v)).collect();
            acc_rows.push((name.clone(), c.method.clone(), points));
        }
        for (method, points) in time_series(runs) {
            time_rows.push((name.clone(), method, points));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let written = [
        out.join("accuracy_points.csv"),
        out.join("accuracy.svg"),
        out.join("time_points.csv"),
        out.join("time.svg"),
    ];
    write_points(&written[0], "accuracy", &acc_rows)?;
    let series: Vec<Series> = acc_rows.iter().map(|(e, m, p)| (label(e, m), p.clone())).collect();
    draw(&written[1], "Test accuracy after each task", "accuracy (%)", &series)?;
    write_points(&written[2], "seconds", &time_rows)?;
    let series: Vec<Series> = time_rows.iter().map(|(e, m, p)| (label(e, m), p.clone())).collect();
    draw(&written[3], "Training time per task", "seconds", &series)?;
    Ok(written.to_vec())
}
