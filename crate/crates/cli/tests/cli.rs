use std::path::Path;
use std::process::{Command, Output};

fn drivercl(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drivercl"))
        .args(args)
        .env("DRIVERCL_CACHE_DIR", cache)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    let text = format!(
        r#"seeds = [1]
permutations = [0]
output_dir = "{}"
strategies = [
    {{ kind = "fine_tune" }},
    {{ kind = "er", memory_size = 40 }},
    {{ kind = "derpp", memory_size = 40 }},
]

[dataset]
source = "synthetic"
spec = {{ drivers = 4, sessions = 2, records = 200, features = 4, seed = 3 }}

[scenario]
kind = "two_new_drivers"

[model]
hidden_size = 8
epochs_per_task = 2
"#,
        dir.join("out").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_stop_resume_compare_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let config = write_config(tmp.path());
    let out = tmp.path().join("out");

    let stopped = drivercl(&["run", "--config", config.to_str().unwrap(), "--stop-after-task", "1"], &cache);
    assert_eq!(code(&stopped), 3, "{}", String::from_utf8_lossy(&stopped.stderr));

    let resumed = drivercl(&["resume", out.to_str().unwrap()], &cache);
    assert_eq!(code(&resumed), 0, "{}", String::from_utf8_lossy(&resumed.stderr));
    let table = String::from_utf8_lossy(&resumed.stdout);
    for method in ["Joint", "Fine-Tuning", "ER", "DER++", "SmooER", "SmooDER"] {
        assert!(table.contains(method), "{method} missing from\n{table}");
    }

    let csv = tmp.path().join("table.csv");
    let compared = drivercl(&["compare", out.to_str().unwrap(), "--output", csv.to_str().unwrap()], &cache);
    assert_eq!(code(&compared), 0);
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 1);

    let plots = tmp.path().join("plots");
    let plotted = drivercl(&["plot", out.to_str().unwrap(), "--output", plots.to_str().unwrap()], &cache);
    assert_eq!(code(&plotted), 0, "{}", String::from_utf8_lossy(&plotted.stderr));
    for file in ["accuracy.svg", "time.svg", "accuracy_points.csv", "time_points.csv"] {
        assert!(plots.join(file).exists(), "{file} not written");
    }

    // Same directory, different settings: refused rather than mixed.
    let changed = drivercl(&["run", "--config", config.to_str().unwrap(), "--epochs", "3"], &cache);
    assert_eq!(code(&changed), 2);
}

#[test]
fn prepare_from_csv_and_synthetic() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let csv = tmp.path().join("log.csv");
    let mut text = String::from("Speed,Rpm,Class,Session\n");
    for driver in ["A", "B"] {
        for session in 1..=2 {
            for i in 0..40 {
                text.push_str(&format!("{},{},{driver},{session}\n", i % 7, (i * 3) % 11));
            }
        }
    }
    std::fs::write(&csv, text).unwrap();
    let out = tmp.path().join("prepared");
    let prepared = drivercl(
        &[
            "prepare", "--csv", csv.to_str().unwrap(), "--driver-labels", "A,B", "--window", "10", "--stride", "5",
            "--output", out.to_str().unwrap(),
        ],
        &cache,
    );
    assert_eq!(code(&prepared), 0, "{}", String::from_utf8_lossy(&prepared.stderr));
    let listing = String::from_utf8_lossy(&prepared.stdout);
    assert!(listing.contains("driver 1 session 2: 5 train / 2 test"), "{listing}");
    assert!(out.join("manifest.json").exists());

    let synthetic = drivercl(&["prepare", "--synthetic", "3,2,100,4,9", "--output", out.to_str().unwrap()], &cache);
    assert_eq!(code(&synthetic), 0);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    let missing = tmp.path().join("missing.csv");
    let cases: Vec<Vec<&str>> = vec![
        vec!["prepare", "--output", out],
        vec!["prepare", "--csv", missing.to_str().unwrap(), "--output", out],
        vec!["prepare", "--synthetic", "3,2,0,4,9", "--output", out],
        vec!["resume", out],
        vec!["run", "--config", missing.to_str().unwrap()],
    ];
    for args in cases {
        let got = drivercl(&args, &cache);
        assert_eq!(code(&got), 2, "{args:?}: {}", String::from_utf8_lossy(&got.stderr));
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = drivercl::eval::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
