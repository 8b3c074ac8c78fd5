use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;

use drivercl::data::{PrepareOptions, PreparedDataset, SyntheticSpec, WindowSample};
use drivercl::eval::build_stream;
use drivercl::model::{init_model, ClassifierConfig, ModelSnapshot};
use drivercl::rng::Rng;
use drivercl::scenarios::{eval_set, ScenarioKind};
use drivercl::smoothing::{decide, smooth, SmoothingState};
use drivercl::strategies::{er_insert, finetune_hooks, ReplayMemory, Strategy as Hooks, StrategyConfig};

fn dataset(drivers: usize, seed: u64) -> PreparedDataset {
    let raw = SyntheticSpec { drivers, sessions: 2, records: 120, features: 3, seed }.generate();
    PreparedDataset::prepare(&raw, PrepareOptions { window: 20, stride: 5, ..Default::default() }).unwrap()
}

fn smooth_all(w: usize, stream: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut state = SmoothingState::new(w);
    stream.iter().map(|z| smooth(&mut state, z).unwrap()).collect()
}

fn logit_stream(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, k), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn streams_conserve_training_windows(half in 2usize..5, perm in 0u64..6, seed in 0u64..1000, kind in 0usize..3) {
        let ds = dataset(2 * half, seed);
        let kind = [ScenarioKind::TwoNewDrivers, ScenarioKind::OneNewDriver, ScenarioKind::TwoNewSessions][kind].clone();
        let stream = build_stream(&kind, &ds, perm).unwrap();
        let mut keys = Vec::new();
        for t in &stream.tasks {
            keys.extend(t.train_windows.iter().map(WindowSample::key));
        }
        let unique: BTreeSet<_> = keys.iter().copied().collect();
        let pool: BTreeSet<_> = ds.train_pool().iter().map(WindowSample::key).collect();
        prop_assert_eq!(unique.len(), keys.len());
        prop_assert_eq!(unique, pool);

        let test = ds.test_pool();
        let mut prev = 0;
        for t in 1..=stream.len() {
            let n = eval_set(&stream, t, &test).unwrap().len();
            prop_assert!(n >= prev);
            prev = n;
        }
        prop_assert_eq!(prev, test.len());
    }

    #[test]
    fn memory_never_exceeds_capacity(cap in 1usize..300, sizes in prop::collection::vec(0usize..400, 1..12), seed in any::<u64>()) {
        let mut memory = ReplayMemory::new(cap);
        let mut r = Rng::seed_from_u64(seed);
        for (i, &n) in sizes.iter().enumerate() {
            let task: Vec<WindowSample> = (0..n).map(|j| WindowSample::from_values(vec![0.0], 1, 1, i as u32, 1, j)).collect();
            er_insert(&mut memory, &task, i + 1, None, &mut r).unwrap();
            prop_assert!(memory.len() <= cap);
            let origins: Vec<usize> = memory.entries.iter().map(|e| e.origin_task).collect();
            prop_assert!(origins.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn smoothing_is_linear(w in 1usize..8, a in -3.0f64..3.0, b in -3.0f64..3.0, pair in (1usize..6).prop_flat_map(|k| (logit_stream(k), logit_stream(k)))) {
        let (x, y) = pair;
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        let mixed: Vec<Vec<f64>> = x.iter().zip(y).map(|(p, q)| p.iter().zip(q).map(|(u, v)| a * u + b * v).collect()).collect();
        let (sx, sy, sm) = (smooth_all(w, x), smooth_all(w, y), smooth_all(w, &mixed));
        for i in 0..n {
            for j in 0..sm[i].len() {
                prop_assert!((sm[i][j] - (a * sx[i][j] + b * sy[i][j])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn smoothing_is_causal(w in 1usize..8, stream in logit_stream(4), cut in 0usize..40, noise in -5.0f64..5.0) {
        let cut = cut.min(stream.len() - 1);
        let mut altered = stream.clone();
        for z in &mut altered[cut + 1..] {
            z.iter_mut().for_each(|v| *v += noise);
        }
        let (a, b) = (smooth_all(w, &stream), smooth_all(w, &altered));
        prop_assert_eq!(&a[..=cut], &b[..=cut]);
    }

    #[test]
    fn decide_picks_first_maximum(z in prop::collection::vec(-3i32..3, 1..12)) {
        let best = *z.iter().max().unwrap();
        let first = z.iter().position(|&v| v == best).unwrap();
        let as_f64: Vec<f64> = z.iter().map(|&v| v as f64).collect();
        prop_assert_eq!(decide(&as_f64).unwrap(), first);
    }
}

fn small_model(seed: u64) -> ModelSnapshot {
    let cfg = ClassifierConfig {
        hidden_size: 12,
        num_layers: 1,
        dropout: 0.0,
        learning_rate: 0.01,
        epochs_per_task: 15,
        batch_size: 16,
        ..ClassifierConfig::reference(3, 4)
    };
    init_model(cfg, seed).unwrap()
}

#[test]
fn fine_tuning_reduces_loss_and_is_deterministic() {
    let ds = dataset(2, 3);
    let data = ds.train_pool();
    let strategy = finetune_hooks();
    let run = || {
        let mut model = small_model(4);
        model.register_classes(&[0, 1]).unwrap();
        let log = drivercl::model::train_task(&mut model, &data, &strategy, 9).unwrap();
        (model, log)
    };
    let (a, log) = run();
    let (b, _) = run();
    assert_eq!(a.net.params, b.net.params);
    let first = log.epoch_losses[0];
    let last = *log.epoch_losses.last().unwrap();
    assert!(last < 0.8 * first, "loss {first} -> {last}");
}

#[test]
fn strategy_state_round_trips() {
    let ds = dataset(4, 8);
    let stream = build_stream(&ScenarioKind::TwoNewDrivers, &ds, 0).unwrap();
    for config in [
        StrategyConfig::Cumulative,
        StrategyConfig::Er { memory_size: 30, replay_ratio: 0.5 },
        StrategyConfig::ewc(),
        StrategyConfig::lwf(),
        StrategyConfig::Derpp { memory_size: 30, alpha: 1.0, beta: 1.0 },
    ] {
        let mut model = small_model(1);
        let mut strategy = Hooks::new(config);
        let mut r = Rng::seed_from_u64(2);
        for task in &stream.tasks {
            model.register_classes(&task.classes_introduced).unwrap();
            strategy.after_task(&model, task, &mut r).unwrap();
        }
        let back = Hooks::decode(&strategy.encode(), &ds, &model).unwrap();
        assert_eq!(back, strategy);
    }
}
