use rand::seq::index;
use rand::Rng as _;

use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::model::ModelSnapshot;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub window: WindowSample,
    /// Active-class logits at insertion time (dark-experience replay only).
    pub logits: Option<Vec<f32>>,
    pub origin_task: usize,
}

/// Fixed-capacity rehearsal store with an equal share per seen task.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    pub capacity: usize,
    pub tasks_seen: usize,
    pub entries: Vec<ReplayEntry>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory { capacity, tasks_seen: 0, entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn per_task_quota(&self) -> usize {
        self.capacity.checked_div(self.tasks_seen).unwrap_or(self.capacity)
    }

    pub fn count_for(&self, task: usize) -> usize {
        self.entries.iter().filter(|e| e.origin_task == task).count()
    }

    /// `n` entries drawn uniformly; without replacement when the memory holds
    /// at least `n`, with replacement otherwise.
    pub fn draw(&self, n: usize, rng: &mut Rng) -> Vec<&ReplayEntry> {
        let len = self.entries.len();
        if len == 0 || n == 0 {
            return Vec::new();
        }
        if len >= n {
            index::sample(rng, len, n).into_iter().map(|i| &self.entries[i]).collect()
        } else {
            (0..n).map(|_| &self.entries[rng.random_range(0..len)]).collect()
        }
    }
}

/// Sorted uniform subset of `0..n` of size `min(k, n)`.
fn subset(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut picked = index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Inserts a finished task: the quota becomes `capacity / tasks_seen`,
/// every stored task is randomly cut down to it, and the new task adds a
/// uniform sample of its windows up to the quota. With `logit_source`, the
/// new entries carry that model's logits.
pub fn er_insert(
    memory: &mut ReplayMemory,
    task_samples: &[WindowSample],
    task_id: usize,
    logit_source: Option<&ModelSnapshot>,
    rng: &mut Rng,
) -> Result<()> {
    if let Some(e) = memory.entries.iter().find(|e| e.origin_task >= task_id) {
        return Err(Error::State(format!(
            "task {task_id} inserted after task {} is already stored",
            e.origin_task
        )));
    }
    memory.tasks_seen += 1;
    let quota = memory.per_task_quota();

    let mut origins: Vec<usize> = memory.entries.iter().map(|e| e.origin_task).collect();
    origins.dedup();
    let mut kept = Vec::with_capacity(memory.capacity);
    for origin in origins {
        let group: Vec<ReplayEntry> = memory.entries.iter().filter(|e| e.origin_task == origin).cloned().collect();
        let keep = subset(group.len(), quota, rng);
        kept.extend(keep.into_iter().map(|i| group[i].clone()));
    }

    let chosen: Vec<WindowSample> = subset(task_samples.len(), quota, rng)
        .into_iter()
        .map(|i| task_samples[i].clone())
        .collect();
    let logits = match logit_source {
        Some(model) => {
            let k = model.k();
            let z = model.predict_logits(&chosen)?;
            z.chunks(k.max(1)).map(|row| Some(row.to_vec())).collect()
        }
        None => vec![None; chosen.len()],
    };
    kept.extend(chosen.into_iter().zip(logits).map(|(window, logits)| ReplayEntry {
        window,
        logits,
        origin_task: task_id,
    }));
    memory.entries = kept;
    Ok(())
}

/// Rows from the current task for a batch of `batch_size` at the given
/// replay ratio.
pub fn current_share(batch_size: usize, replay_ratio: f64) -> usize {
    batch_size - replay_share(batch_size, replay_ratio)
}

pub fn replay_share(batch_size: usize, replay_ratio: f64) -> usize {
    ((batch_size as f64 * replay_ratio).round() as usize).min(batch_size)
}

/// Mixes up to `current_share` current windows with `replay_share` windows
/// drawn from memory. An empty memory leaves the batch unchanged.
pub fn er_compose_batch(
    memory: &ReplayMemory,
    current: &[WindowSample],
    batch_size: usize,
    replay_ratio: f64,
    rng: &mut Rng,
) -> Vec<WindowSample> {
    if memory.is_empty() {
        return current.to_vec();
    }
    let take = current.len().min(current_share(batch_size, replay_ratio));
    let mut batch = current[..take].to_vec();
    batch.extend(memory.draw(replay_share(batch_size, replay_ratio), rng).into_iter().map(|e| e.window.clone()));
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn samples(n: usize, label: u32) -> Vec<WindowSample> {
        (0..n).map(|i| WindowSample::from_values(vec![i as f32; 2], 1, 2, label, 1, i)).collect()
    }

    #[test]
    fn quota_rule() {
        let mut rng = Rng::seed_from_u64(1);
        let mut m = ReplayMemory::new(1000);
        er_insert(&mut m, &samples(3000, 0), 1, None, &mut rng).unwrap();
        assert_eq!(m.len(), 1000);
        er_insert(&mut m, &samples(3000, 1), 2, None, &mut rng).unwrap();
        assert_eq!((m.count_for(1), m.count_for(2)), (500, 500));
        for t in 3..=5 {
            er_insert(&mut m, &samples(3000, t as u32), t, None, &mut rng).unwrap();
        }
        assert!((1..=5).all(|t| m.count_for(t) == 200));
    }

    #[test]
    fn small_task_stored_whole() {
        let mut rng = Rng::seed_from_u64(1);
        let mut m = ReplayMemory::new(100);
        er_insert(&mut m, &samples(10, 0), 1, None, &mut rng).unwrap();
        assert_eq!(m.len(), 10);
        assert!(er_insert(&mut m, &samples(10, 0), 1, None, &mut rng).is_err());
    }

    #[test]
    fn composition_limits() {
        let mut rng = Rng::seed_from_u64(3);
        let mut m = ReplayMemory::new(50);
        let cur = samples(32, 9);
        assert_eq!(er_compose_batch(&m, &cur, 32, 0.5, &mut rng), cur);
        er_insert(&mut m, &samples(40, 0), 1, None, &mut rng).unwrap();
        let b = er_compose_batch(&m, &cur[..16], 32, 0.5, &mut rng);
        assert_eq!(b.len(), 32);
        assert_eq!(b.iter().filter(|w| w.label == 9).count(), 16);
        assert_eq!(er_compose_batch(&m, &cur, 32, 0.0, &mut rng), cur);
        let all_memory = er_compose_batch(&m, &cur, 32, 1.0, &mut rng);
        assert!(all_memory.len() == 32 && all_memory.iter().all(|w| w.label == 0));
    }
}
