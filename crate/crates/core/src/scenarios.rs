//! Incremental-driver task streams and the cumulative evaluation-set rule.
//!
//! Three stream layouts are supported: two new drivers per task, one new
//! driver per task after an initial pair, and two drive sessions per task
//! (where a task may bring new drivers or new data for known ones).

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DriverId, PreparedDataset, WindowSample};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    TwoNewDrivers,
    OneNewDriver,
    TwoNewSessions,
    /// Class-incremental stream with arbitrary group sizes, e.g. `[2, 2, 1]`
    /// for pairs over an odd driver count.
    ClassGroups(Vec<usize>),
    /// Everything in one task.
    Joint,
}

#[derive(Debug, Clone)]
pub struct Task {
    /// 1-based.
    pub task_id: usize,
    pub train_windows: Vec<WindowSample>,
    /// Drivers first seen in this task, in introduction order.
    pub classes_introduced: Vec<DriverId>,
    pub sessions_included: Vec<(DriverId, u32)>,
}

#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub kind: ScenarioKind,
    /// Driver order for class-incremental streams; order of first
    /// appearance for session streams.
    pub permutation: Vec<DriverId>,
    pub seed: u64,
}

/// Seed 0 is the identity (sorted) order; any other seed shuffles.
pub fn permute_classes(driver_ids: &[DriverId], seed: u64) -> Vec<DriverId> {
    let mut ids: Vec<_> = driver_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if seed != 0 {
        ids.shuffle(&mut rng::rng_for(seed, "class-order", 0));
    }
    ids
}

fn check_order(dataset: &PreparedDataset, order: &[DriverId]) -> Result<()> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != dataset.drivers() {
        return Err(Error::Config(format!(
            "class order {order:?} is not a permutation of the dataset drivers {:?}",
            dataset.drivers()
        )));
    }
    Ok(())
}

fn driver_task(dataset: &PreparedDataset, task_id: usize, drivers: &[DriverId]) -> Task {
    let sessions_included: Vec<_> = drivers
        .iter()
        .flat_map(|&d| dataset.sessions_of(d).into_iter().map(|s| (s.driver_id, s.session_id)))
        .collect();
    Task {
        task_id,
        train_windows: collect_train(dataset, &sessions_included),
        classes_introduced: drivers.to_vec(),
        sessions_included,
    }
}

fn collect_train(dataset: &PreparedDataset, sessions: &[(DriverId, u32)]) -> Vec<WindowSample> {
    sessions
        .iter()
        .filter_map(|&(d, s)| dataset.session(d, s))
        .flat_map(|s| s.train.iter().cloned())
        .collect()
}

/// Class-incremental stream: consecutive groups of `sizes` drivers taken
/// from `order`.
pub fn build_class_groups(dataset: &PreparedDataset, order: &[DriverId], sizes: &[usize]) -> Result<TaskStream> {
    check_order(dataset, order)?;
    if sizes.contains(&0) || sizes.iter().sum::<usize>() != order.len() {
        return Err(Error::Config(format!(
            "group sizes {sizes:?} do not partition {} drivers",
            order.len()
        )));
    }
    let mut tasks = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for (i, &size) in sizes.iter().enumerate() {
        let task = driver_task(dataset, i + 1, &order[start..start + size]);
        if task.train_windows.is_empty() {
            return Err(Error::Config(format!("task {} has no training windows", i + 1)));
        }
        tasks.push(task);
        start += size;
    }
    Ok(TaskStream {
        tasks,
        kind: ScenarioKind::ClassGroups(sizes.to_vec()),
        permutation: order.to_vec(),
        seed: 0,
    })
}

/// Two new drivers per task.
pub fn build_scenario1(dataset: &PreparedDataset, order: &[DriverId]) -> Result<TaskStream> {
    if order.is_empty() || !order.len().is_multiple_of(2) {
        return Err(Error::Config(format!(
            "two-new-drivers scenario needs an even driver count, got {}",
            order.len()
        )));
    }
    let mut stream = build_class_groups(dataset, order, &vec![2; order.len() / 2])?;
    stream.kind = ScenarioKind::TwoNewDrivers;
    Ok(stream)
}

/// A pair of drivers first, then one new driver per task.
pub fn build_scenario2(dataset: &PreparedDataset, order: &[DriverId]) -> Result<TaskStream> {
    if order.len() < 3 {
        return Err(Error::Config(format!(
            "one-new-driver scenario needs at least 3 drivers, got {}",
            order.len()
        )));
    }
    let mut sizes = vec![2];
    sizes.resize(order.len() - 1, 1);
    let mut stream = build_class_groups(dataset, order, &sizes)?;
    stream.kind = ScenarioKind::OneNewDriver;
    Ok(stream)
}

/// Orders all (driver, session) units, keeping each driver's sessions in
/// ascending order, and pairs consecutive units into tasks.
///
/// Seed 0 keeps drivers in sorted order with their sessions adjacent.
pub fn build_scenario3(dataset: &PreparedDataset, session_order_seed: u64) -> Result<TaskStream> {
    let mut slots: Vec<DriverId> = dataset.sessions.iter().map(|s| s.driver_id).collect();
    if slots.is_empty() || !slots.len().is_multiple_of(2) {
        return Err(Error::Config(format!(
            "two-new-sessions scenario needs an even session count, got {}",
            slots.len()
        )));
    }
    slots.sort_unstable();
    if session_order_seed != 0 {
        slots.shuffle(&mut rng::rng_for(session_order_seed, "session-order", 0));
    }
    // The k-th occurrence of a driver in the shuffled slot list takes that
    // driver's k-th session, which enforces session-1-before-session-2.
    let mut next: std::collections::HashMap<DriverId, usize> = Default::default();
    let units: Vec<(DriverId, u32)> = slots
        .iter()
        .map(|&d| {
            let k = next.entry(d).or_insert(0);
            let s = dataset.sessions_of(d)[*k].session_id;
            *k += 1;
            (d, s)
        })
        .collect();
    let mut seen = HashSet::new();
    let mut permutation = Vec::new();
    let mut tasks = Vec::with_capacity(units.len() / 2);
    for (i, pair) in units.chunks(2).enumerate() {
        let mut introduced = Vec::new();
        for &(d, _) in pair {
            if seen.insert(d) {
                introduced.push(d);
                permutation.push(d);
            }
        }
        let task = Task {
            task_id: i + 1,
            train_windows: collect_train(dataset, pair),
            classes_introduced: introduced,
            sessions_included: pair.to_vec(),
        };
        if task.train_windows.is_empty() {
            return Err(Error::Config(format!("task {} has no training windows", i + 1)));
        }
        tasks.push(task);
    }
    Ok(TaskStream {
        tasks,
        kind: ScenarioKind::TwoNewSessions,
        permutation,
        seed: session_order_seed,
    })
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Drivers introduced in tasks `1..=t`, in introduction order.
    pub fn seen_classes(&self, t: usize) -> Vec<DriverId> {
        self.tasks[..t.min(self.tasks.len())]
            .iter()
            .flat_map(|task| task.classes_introduced.iter().copied())
            .collect()
    }

    /// Collapses the stream into a single task holding every session, in
    /// stream order.
    pub fn joint(&self) -> TaskStream {
        let task = Task {
            task_id: 1,
            train_windows: self.tasks.iter().flat_map(|t| t.train_windows.iter().cloned()).collect(),
            classes_introduced: self.seen_classes(self.tasks.len()),
            sessions_included: self.tasks.iter().flat_map(|t| t.sessions_included.iter().copied()).collect(),
        };
        TaskStream {
            tasks: vec![task],
            kind: ScenarioKind::Joint,
            permutation: self.permutation.clone(),
            seed: self.seed,
        }
    }

    pub fn manifest(&self, dataset_hash: &str) -> StreamManifest {
        StreamManifest {
            kind: self.kind.clone(),
            seed: self.seed,
            permutation: self.permutation.clone(),
            dataset_hash: dataset_hash.to_string(),
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskManifest {
                    task_id: t.task_id,
                    classes_introduced: t.classes_introduced.clone(),
                    sessions: t.sessions_included.clone(),
                    train_windows: t.train_windows.len(),
                })
                .collect(),
        }
    }

    pub fn from_manifest(manifest: &StreamManifest, dataset: &PreparedDataset) -> Result<TaskStream> {
        manifest.validate()?;
        if manifest.dataset_hash != dataset.hash() {
            return Err(Error::Config("stream manifest was built from a different dataset".into()));
        }
        let mut tasks = Vec::with_capacity(manifest.tasks.len());
        for tm in &manifest.tasks {
            for &(d, s) in &tm.sessions {
                if dataset.session(d, s).is_none() {
                    return Err(Error::Config(format!("manifest names unknown session ({d}, {s})")));
                }
            }
            let train_windows = collect_train(dataset, &tm.sessions);
            if train_windows.len() != tm.train_windows {
                return Err(Error::Config(format!(
                    "task {} expects {} training windows, dataset yields {}",
                    tm.task_id,
                    tm.train_windows,
                    train_windows.len()
                )));
            }
            tasks.push(Task {
                task_id: tm.task_id,
                train_windows,
                classes_introduced: tm.classes_introduced.clone(),
                sessions_included: tm.sessions.clone(),
            });
        }
        Ok(TaskStream {
            tasks,
            kind: manifest.kind.clone(),
            permutation: manifest.permutation.clone(),
            seed: manifest.seed,
        })
    }
}

/// Test windows of every driver introduced in tasks `1..=t`, both sessions,
/// session-major and time-ascending.
pub fn eval_set(stream: &TaskStream, t: usize, test_pool: &[WindowSample]) -> Result<Vec<WindowSample>> {
    if t == 0 || t > stream.len() {
        return Err(Error::Index(format!("task {t} outside 1..={}", stream.len())));
    }
    let seen: HashSet<DriverId> = stream.seen_classes(t).into_iter().collect();
    let mut out: Vec<WindowSample> = test_pool.iter().filter(|w| seen.contains(&w.label)).cloned().collect();
    out.sort_by_key(|w| (w.label, w.session_id, w.index));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub task_id: usize,
    pub classes_introduced: Vec<DriverId>,
    pub sessions: Vec<(DriverId, u32)>,
    pub train_windows: usize,
}

/// Reconstructible description of a [`TaskStream`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamManifest {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub permutation: Vec<DriverId>,
    pub dataset_hash: String,
    pub tasks: Vec<TaskManifest>,
}

impl StreamManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: StreamManifest =
            serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("stream manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// Structural checks that need no dataset.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Corrupt("stream manifest has no tasks".into()));
        }
        let mut seen_sessions = HashSet::new();
        let mut seen_classes = HashSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if t.task_id != i + 1 {
                return Err(Error::Corrupt(format!("task ids must be 1..n in order, found {}", t.task_id)));
            }
            if t.sessions.is_empty() || t.train_windows == 0 {
                return Err(Error::Corrupt(format!("task {} is empty", t.task_id)));
            }
            let drivers: HashSet<DriverId> = t.sessions.iter().map(|s| s.0).collect();
            for s in &t.sessions {
                if !seen_sessions.insert(*s) {
                    return Err(Error::Corrupt(format!("session {s:?} appears twice")));
                }
            }
            for c in &t.classes_introduced {
                if !drivers.contains(c) || !seen_classes.insert(*c) {
                    return Err(Error::Corrupt(format!(
                        "task {} introduces driver {c} inconsistently",
                        t.task_id
                    )));
                }
            }
            if let Some(d) = drivers.iter().find(|d| !seen_classes.contains(d)) {
                return Err(Error::Corrupt(format!("driver {d} trains before being introduced")));
            }
        }
        let perm: HashSet<DriverId> = self.permutation.iter().copied().collect();
        if perm.len() != self.permutation.len() || perm != seen_classes {
            return Err(Error::Corrupt("permutation does not match introduced drivers".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, PrepareOptions};

    fn dataset(drivers: usize) -> PreparedDataset {
        PreparedDataset::prepare(&generate_synthetic(drivers, 2, 130, 3, 4), PrepareOptions::default()).unwrap()
    }

    fn class_counts(s: &TaskStream) -> Vec<usize> {
        s.tasks.iter().map(|t| t.classes_introduced.len()).collect()
    }

    #[test]
    fn permutation_conventions() {
        let ids: Vec<DriverId> = (0..10).collect();
        assert_eq!(permute_classes(&ids, 0), ids);
        assert_eq!(permute_classes(&ids, 3), permute_classes(&ids, 3));
        let mut p = permute_classes(&ids, 11);
        assert_ne!(p, ids);
        p.sort_unstable();
        assert_eq!(p, ids);
    }

    #[test]
    fn scenario1_pairs() {
        let ds = dataset(10);
        let order = permute_classes(&ds.drivers(), 0);
        let s = build_scenario1(&ds, &order).unwrap();
        assert_eq!(s.len(), 5);
        let pairs: Vec<_> = s.tasks.iter().map(|t| t.classes_introduced.clone()).collect();
        assert_eq!(pairs, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]);
        for t in &s.tasks {
            assert!(t.train_windows.iter().all(|w| t.classes_introduced.contains(&w.label)));
        }
        assert!(build_scenario1(&dataset(3), &[0, 1, 2]).is_err());
        let two = build_scenario1(&dataset(2), &[1, 0]).unwrap();
        assert_eq!(two.len(), 1);
        assert_eq!(two.tasks[0].train_windows.len(), ds.train_pool().len() / 5);
    }

    #[test]
    fn scenario2_sequence() {
        let ds = dataset(10);
        let s = build_scenario2(&ds, &permute_classes(&ds.drivers(), 0)).unwrap();
        assert_eq!(class_counts(&s), vec![2, 1, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(s.tasks[0].classes_introduced, vec![0, 1]);
        assert_eq!(s.seen_classes(9).len(), 10);
        assert!(build_scenario2(&dataset(2), &[0, 1]).is_err());
    }

    #[test]
    fn scenario3_sessions() {
        let ds = dataset(10);
        for seed in 0..20 {
            let s = build_scenario3(&ds, seed).unwrap();
            assert_eq!(s.len(), 10);
            let mut first_task = std::collections::HashMap::new();
            for t in &s.tasks {
                assert_eq!(t.sessions_included.len(), 2);
                for &(d, sess) in &t.sessions_included {
                    let prev = first_task.insert((d, sess), t.task_id);
                    assert!(prev.is_none());
                }
            }
            for d in 0..10 {
                assert!(first_task[&(d, 1)] <= first_task[&(d, 2)]);
            }
        }
        // Seed 0 keeps a driver's sessions adjacent: one new driver per task.
        let s = build_scenario3(&ds, 0).unwrap();
        assert!(s.tasks.iter().all(|t| t.classes_introduced.len() == 1));
    }

    #[test]
    fn eval_set_membership_is_by_driver() {
        let ds = dataset(10);
        let pool = ds.test_pool();
        let s1 = build_scenario1(&ds, &permute_classes(&ds.drivers(), 0)).unwrap();
        let e1 = eval_set(&s1, 1, &pool).unwrap();
        assert!(e1.iter().all(|w| w.label <= 1));
        assert_eq!(e1.len(), pool.iter().filter(|w| w.label <= 1).count());
        assert_eq!(eval_set(&s1, 5, &pool).unwrap().len(), pool.len());
        assert!(eval_set(&s1, 0, &pool).is_err());
        assert!(eval_set(&s1, 6, &pool).is_err());

        let s3 = build_scenario3(&ds, 7).unwrap();
        for t in 1..=s3.len() {
            let seen: HashSet<_> = s3.seen_classes(t).into_iter().collect();
            let e = eval_set(&s3, t, &pool).unwrap();
            for d in &seen {
                assert!(e.iter().any(|w| w.label == *d && w.session_id == 2));
            }
        }
    }

    #[test]
    fn manifest_round_trip() {
        let ds = dataset(4);
        let s = build_scenario3(&ds, 5).unwrap();
        let json = s.manifest(ds.hash()).to_json();
        let m = StreamManifest::from_json(&json).unwrap();
        let back = TaskStream::from_manifest(&m, &ds).unwrap();
        assert_eq!(back.len(), s.len());
        for (a, b) in back.tasks.iter().zip(&s.tasks) {
            assert_eq!(a.train_windows, b.train_windows);
            assert_eq!(a.classes_introduced, b.classes_introduced);
        }
        let mut bad = m.clone();
        bad.tasks[0].classes_introduced.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn joint_holds_everything() {
        let ds = dataset(4);
        let s = build_scenario1(&ds, &[2, 0, 3, 1]).unwrap();
        let j = s.joint();
        assert_eq!(j.len(), 1);
        assert_eq!(j.tasks[0].classes_introduced, vec![2, 0, 3, 1]);
        assert_eq!(j.tasks[0].train_windows.len(), ds.train_pool().len());
    }
}
