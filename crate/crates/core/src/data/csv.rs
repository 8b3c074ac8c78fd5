use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DriverId, RawDataset, SessionTrace};
use crate::error::{Error, Result};

/// Column roles for a sensor-log CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub driver_column: String,
    pub session_column: String,
    /// Sensor columns to keep. `None` means every column not otherwise named.
    #[serde(default)]
    pub sensor_columns: Option<Vec<String>>,
    #[serde(default)]
    pub ignore_columns: Vec<String>,
    /// Maps raw driver labels (e.g. `"A"`..`"J"`) to class ids by position.
    /// Without it, labels must be non-negative integers.
    #[serde(default)]
    pub driver_labels: Option<Vec<String>>,
    #[serde(default)]
    pub max_drivers: Option<u32>,
    #[serde(default = "default_rate")]
    pub sample_rate: f64,
}

fn default_rate() -> f64 {
    1.0
}

impl CsvSchema {
    pub fn new(driver_column: impl Into<String>, session_column: impl Into<String>) -> Self {
        Self {
            driver_column: driver_column.into(),
            session_column: session_column.into(),
            sensor_columns: None,
            ignore_columns: Vec::new(),
            driver_labels: None,
            max_drivers: None,
            sample_rate: 1.0,
        }
    }

    fn driver_id(&self, raw: &str, row: usize) -> Result<DriverId> {
        let raw = raw.trim();
        let id = match &self.driver_labels {
            Some(labels) => labels
                .iter()
                .position(|l| l == raw)
                .map(|p| p as DriverId)
                .ok_or_else(|| Error::Schema(format!("row {row}: unknown driver label {raw:?}")))?,
            None => raw
                .parse::<DriverId>()
                .map_err(|_| Error::Schema(format!("row {row}: unknown driver label {raw:?}")))?,
        };
        if let Some(max) = self.max_drivers {
            if id >= max {
                return Err(Error::Schema(format!("row {row}: driver id {id} outside [0, {max})")));
            }
        }
        Ok(id)
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, schema)
}

/// Parses a header-first CSV. Row numbers in errors are 1-based file lines.
pub fn load_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<RawDataset> {
    let mut rdr = ::csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, message: e.to_string() })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Parse { row: 1, message: "missing header row".into() });
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header")))
    };
    let driver_col = find(&schema.driver_column)?;
    let session_col = find(&schema.session_column)?;
    let sensor_cols: Vec<usize> = match &schema.sensor_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != driver_col && i != session_col)
            .filter(|&i| !schema.ignore_columns.iter().any(|n| n == headers[i].trim()))
            .collect(),
    };
    if sensor_cols.is_empty() {
        return Err(Error::Schema("no sensor columns".into()));
    }
    let feature_names: Vec<String> = sensor_cols.iter().map(|&i| headers[i].trim().to_string()).collect();
    let n_features = sensor_cols.len();

    let mut groups: BTreeMap<(DriverId, u32), Vec<f64>> = BTreeMap::new();
    let mut record = ::csv::StringRecord::new();
    let mut rows = 0usize;
    loop {
        let line = rdr.position().line() as usize;
        match rdr.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let row = e.position().map_or(line, |p| p.line() as usize);
                return Err(Error::Parse { row, message: e.to_string() });
            }
        }
        let row = record.position().map_or(line, |p| p.line() as usize);
        let driver = schema.driver_id(&record[driver_col], row)?;
        let session_raw = record[session_col].trim();
        let session = session_raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= f64::from(u32::MAX))
            .ok_or_else(|| Error::Parse {
                row,
                message: format!("session id {session_raw:?} is not a non-negative integer"),
            })? as u32;
        let values = groups.entry((driver, session)).or_default();
        for (&col, name) in sensor_cols.iter().zip(&feature_names) {
            let cell = record[col].trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column {name:?}: non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("column {name:?}: non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse { row: 1, message: "no data rows".into() });
    }
    let sessions = groups
        .into_iter()
        .map(|((driver_id, session_id), records)| SessionTrace {
            driver_id,
            session_id,
            records,
            n_features,
            start_index: 0,
        })
        .collect();
    Ok(RawDataset {
        sessions,
        feature_names,
        sample_rate: schema.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CsvSchema {
        CsvSchema::new("driver", "session")
    }

    #[test]
    fn minimal_file_yields_one_session() {
        let mut text = String::from("driver,session,a,b,c,d,e\n");
        for i in 0..100 {
            text.push_str(&format!("0,1,{i},{},{},1.5,-2\n", i * 2, i % 7));
        }
        let ds = load_csv_reader(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.sessions.len(), 1);
        assert_eq!(ds.sessions[0].len(), 100);
        assert_eq!(ds.n_features(), 5);
        assert_eq!(ds.sessions[0].row(3), &[3.0, 6.0, 3.0, 1.5, -2.0]);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(load_csv_reader(&b""[..], &schema()), Err(Error::Parse { .. })));
        assert!(matches!(
            load_csv_reader(&b"driver,session,a\n"[..], &schema()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let text = "driver,session,a\n0,1,1.0\n0,1,oops\n";
        match load_csv_reader(text.as_bytes(), &schema()) {
            Err(Error::Parse { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_schema_error() {
        let mut s = schema();
        s.driver_labels = Some(vec!["A".into(), "B".into()]);
        let text = "driver,session,a\nA,1,1\nC,1,2\n";
        assert!(matches!(load_csv_reader(text.as_bytes(), &s), Err(Error::Schema(_))));
        let ok = "driver,session,a\nB,2,1\nA,1,2\n";
        let ds = load_csv_reader(ok.as_bytes(), &s).unwrap();
        assert_eq!(ds.drivers(), vec![0, 1]);
    }

    #[test]
    fn sessions_are_grouped_per_driver_and_session() {
        let text = "driver,session,time,a\n1,1,0,5\n1,2,1,6\n0,1,2,7\n1,1,3,8\n";
        let mut s = schema();
        s.ignore_columns = vec!["time".into()];
        let ds = load_csv_reader(text.as_bytes(), &s).unwrap();
        assert_eq!(ds.feature_names, vec!["a".to_string()]);
        let keys: Vec<_> = ds.sessions.iter().map(|t| (t.driver_id, t.session_id, t.records.clone())).collect();
        assert_eq!(
            keys,
            vec![(0, 1, vec![7.0]), (1, 1, vec![5.0, 8.0]), (1, 2, vec![6.0])]
        );
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv(Path::new("/nonexistent/drivers.csv"), &schema()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
