use serde::{Deserialize, Serialize};

use super::SessionTrace;
use crate::error::{Error, Result};

/// Which raw columns survive pruning, and the z-score statistics of the
/// survivors. Variances use the population (1/N) convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMask {
    pub retained: Vec<bool>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureMask {
    pub fn n_raw(&self) -> usize {
        self.retained.len()
    }

    pub fn n_retained(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_retained();
        if self.means.len() != k || self.stds.len() != k {
            return Err(Error::Shape(format!(
                "mask retains {k} features but has {} means and {} stds",
                self.means.len(),
                self.stds.len()
            )));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Corrupt("non-finite mean in feature mask".into()));
        }
        if self.stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Corrupt("feature mask stds must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mask serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mask: FeatureMask =
            serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("feature mask: {e}")))?;
        mask.validate()?;
        Ok(mask)
    }
}

/// Fits the mask on row-major `rows` with `n_features` columns.
///
/// A column is dropped iff every fit row holds the same value.
pub fn fit_feature_mask(rows: &[f64], n_features: usize) -> Result<FeatureMask> {
    if n_features == 0 || !rows.len().is_multiple_of(n_features) {
        return Err(Error::Shape(format!(
            "{} values do not form rows of {n_features} features",
            rows.len()
        )));
    }
    let n = rows.len() / n_features;
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 rows to fit, got {n}")));
    }
    let mut retained = vec![false; n_features];
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for j in 0..n_features {
        let col = rows.iter().skip(j).step_by(n_features);
        let first = rows[j];
        if col.clone().all(|&v| v == first) {
            continue;
        }
        let mean = col.clone().sum::<f64>() / n as f64;
        let var = col.map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            continue;
        }
        retained[j] = true;
        means.push(mean);
        stds.push(std);
    }
    Ok(FeatureMask { retained, means, stds })
}

/// Drops pruned columns and z-scores the rest.
pub fn standardize(trace: &SessionTrace, mask: &FeatureMask) -> Result<SessionTrace> {
    if trace.n_features != mask.n_raw() {
        return Err(Error::Shape(format!(
            "trace has {} columns, mask expects {}",
            trace.n_features,
            mask.n_raw()
        )));
    }
    let kept: Vec<usize> = (0..mask.n_raw()).filter(|&j| mask.retained[j]).collect();
    let mut records = Vec::with_capacity(trace.len() * kept.len());
    for i in 0..trace.len() {
        let row = trace.row(i);
        for (slot, &j) in kept.iter().enumerate() {
            records.push((row[j] - mask.means[slot]) / mask.stds[slot]);
        }
    }
    Ok(SessionTrace {
        driver_id: trace.driver_id,
        session_id: trace.session_id,
        records,
        n_features: kept.len(),
        start_index: trace.start_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(rows: &[&[f64]]) -> SessionTrace {
        SessionTrace {
            driver_id: 0,
            session_id: 1,
            records: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            n_features: rows[0].len(),
            start_index: 0,
        }
    }

    #[test]
    fn constant_column_is_dropped() {
        let mask = fit_feature_mask(&[7.0, 1.0, 7.0, 2.0, 7.0, 4.0], 2).unwrap();
        assert_eq!(mask.retained, vec![false, true]);
        assert_eq!(mask.n_retained(), 1);
    }

    #[test]
    fn population_statistics() {
        let mask = fit_feature_mask(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(mask.means, vec![2.0]);
        assert!((mask.stds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let out = standardize(&trace(&[&[1.0], &[2.0], &[3.0]]), &mask).unwrap();
        let expected = [-1.224_744_871, 0.0, 1.224_744_871];
        for (a, b) in out.records.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn fewer_than_two_rows_is_insufficient() {
        assert!(matches!(fit_feature_mask(&[1.0, 2.0], 2), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn substitution_and_constant_rows() {
        let mask = FeatureMask { retained: vec![true], means: vec![2.0], stds: vec![1.0] };
        assert_eq!(standardize(&trace(&[&[4.0]]), &mask).unwrap().records, vec![2.0]);
        let mask = FeatureMask { retained: vec![true, true], means: vec![3.0, -1.0], stds: vec![2.0, 0.5] };
        let out = standardize(&trace(&[&[3.0, -1.0], &[3.0, -1.0]]), &mask).unwrap();
        assert!(out.records.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let mask = FeatureMask { retained: vec![true, true], means: vec![0.0, 0.0], stds: vec![1.0, 1.0] };
        assert!(matches!(standardize(&trace(&[&[1.0]]), &mask), Err(Error::Shape(_))));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mask = fit_feature_mask(&[1.0, 5.0, 2.0, 5.0, 4.0, 5.0], 2).unwrap();
        assert_eq!(FeatureMask::from_json(&mask.to_json()).unwrap(), mask);
        let bad = r#"{"retained":[true],"means":[0.0],"stds":[0.0]}"#;
        assert!(FeatureMask::from_json(bad).is_err());
        let extra = r#"{"retained":[true],"means":[0.0],"stds":[1.0],"x":1}"#;
        assert!(FeatureMask::from_json(extra).is_err());
    }

    proptest! {
        #[test]
        fn refit_on_standardized_rows_is_unit(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..60)) {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let mask = fit_feature_mask(&flat, 3).unwrap();
            let t = SessionTrace { driver_id: 0, session_id: 1, records: flat, n_features: 3, start_index: 0 };
            let z = standardize(&t, &mask).unwrap();
            if z.n_features > 0 {
                let refit = fit_feature_mask(&z.records, z.n_features).unwrap();
                for (m, s) in refit.means.iter().zip(&refit.stds) {
                    prop_assert!(m.abs() < 1e-6);
                    prop_assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
