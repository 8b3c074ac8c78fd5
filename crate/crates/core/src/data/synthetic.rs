use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{RawDataset, SessionTrace};
use crate::rng;

/// Desk-scale stand-in for a recorded driving dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub drivers: usize,
    pub sessions: usize,
    pub records: usize,
    pub features: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn generate(&self) -> RawDataset {
        generate_synthetic(self.drivers, self.sessions, self.records, self.features, self.seed)
    }
}

const MEAN_SPREAD: f64 = 1.6;
const EPISODE_RATE: f64 = 1.0 / 60.0;
const EPISODE_LEN: (usize, usize) = (6, 12);

/// Each driver is a first-order autoregressive process with its own mean
/// vector, per-feature AR coefficients and noise scale, on top of a slow
/// "road" process shared by everyone. Every session also receives a small
/// per-session offset so later sessions of a driver are a mild domain shift.
/// Short atypical episodes, where a driver's signals drift toward another
/// driver's profile for a few records, give isolated hard windows.
pub fn generate_synthetic(
    n_drivers: usize,
    sessions_per_driver: usize,
    records_per_session: usize,
    n_features: usize,
    seed: u64,
) -> RawDataset {
    assert!(
        n_drivers >= 1 && sessions_per_driver >= 1 && records_per_session >= 1 && n_features >= 1,
        "synthetic dataset dimensions must be positive"
    );
    let mut profile_rng = rng::rng_for(seed, "synthetic-profile", 0);
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
    let loadings: Vec<f64> = (0..n_features)
        .map(|_| Normal::new(0.0, 0.6).expect("valid normal").sample(&mut profile_rng))
        .collect();

    struct Profile {
        means: Vec<f64>,
        phis: Vec<f64>,
        sigma: f64,
    }
    let profiles: Vec<Profile> = (0..n_drivers)
        .map(|_| Profile {
            means: (0..n_features)
                .map(|_| MEAN_SPREAD * profile_rng.sample::<f64, _>(StandardNormal))
                .collect(),
            phis: (0..n_features).map(|_| 0.5 + 0.45 * unit.sample(&mut profile_rng)).collect(),
            sigma: 0.6 + 0.8 * unit.sample(&mut profile_rng),
        })
        .collect();

    let mut sessions = Vec::with_capacity(n_drivers * sessions_per_driver);
    for (driver, p) in profiles.iter().enumerate() {
        for session in 0..sessions_per_driver {
            let mut srng = rng::rng_for(seed, "synthetic-session", (driver * sessions_per_driver + session) as u64);
            let offsets: Vec<f64> = (0..n_features)
                .map(|_| 0.15 * srng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut state: Vec<f64> = p.means.iter().zip(&offsets).map(|(m, o)| m + o).collect();
            let mut road = 0.0f64;
            // Remaining records of an atypical episode and whose profile it borrows.
            let mut episode = (0usize, driver);
            let mut records = Vec::with_capacity(records_per_session * n_features);
            for _ in 0..records_per_session {
                road = 0.98 * road + 0.12 * srng.sample::<f64, _>(StandardNormal);
                if episode.0 == 0 && n_drivers > 1 && srng.random_bool(EPISODE_RATE) {
                    let other = (driver + 1 + srng.random_range(0..n_drivers - 1)) % n_drivers;
                    episode = (srng.random_range(EPISODE_LEN.0..=EPISODE_LEN.1), other);
                }
                let target = if episode.0 > 0 {
                    episode.0 -= 1;
                    &profiles[episode.1].means
                } else {
                    &p.means
                };
                for j in 0..n_features {
                    let center = target[j] + offsets[j];
                    let innovation = p.sigma * (1.0 - p.phis[j] * p.phis[j]).sqrt() * srng.sample::<f64, _>(StandardNormal);
                    state[j] = center + p.phis[j] * (state[j] - center) + innovation;
                    records.push(state[j] + loadings[j] * road);
                }
            }
            sessions.push(SessionTrace {
                driver_id: driver as u32,
                session_id: session as u32 + 1,
                records,
                n_features,
                start_index: 0,
            });
        }
    }
    RawDataset {
        sessions,
        feature_names: (0..n_features).map(|j| format!("sensor_{j}")).collect(),
        sample_rate: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_synthetic(5, 2, 600, 8, 0);
        let b = generate_synthetic(5, 2, 600, 8, 0);
        assert_eq!(a, b);
        let c = generate_synthetic(5, 2, 600, 8, 1);
        assert_ne!(a.sessions[0].records, c.sessions[0].records);
        assert_eq!(a.sessions.len(), 10);
        assert_eq!(a.sessions[3].len(), 600);
        assert_eq!((a.sessions[3].driver_id, a.sessions[3].session_id), (1, 2));
        assert!(a.sessions.iter().all(|s| s.records.iter().all(|v| v.is_finite())));
    }
}
