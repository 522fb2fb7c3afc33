//! Result rows and CSV writing.
//!
//! One CSV schema covers every estimator: one row per `(threshold,
//! metric)`. Fields are written with shortest round-trip float formatting
//! and RFC-4180 quoting; absent values (undefined estimates, unavailable
//! bounds) are empty cells.

use std::path::Path;

use serde::Serialize;

use crate::error::Error;

/// One row of an experiment result file.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub true_hyp: String,
    pub nu: u64,
    pub b: f64,
    pub metric: String,
    pub value: Option<f64>,
    pub se: Option<f64>,
    pub n_effective: u64,
    pub n_nominal: u64,
    pub n_truncated: u64,
    pub bound_value: Option<f64>,
    pub seed: u64,
}

/// Writes rows to `path` via a temporary sibling file and an atomic
/// rename, so failed runs leave no partial output behind.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Error> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp);
    {
        let mut writer = csv::Writer::from_path(tmp_path)?;
        for row in rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
    }
    std::fs::rename(tmp_path, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_serialize_with_empty_optionals() {
        let dir = std::env::temp_dir().join(format!("mincusum-results-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rows.csv");
        let rows = vec![ResultRow {
            scenario_id: "single_fault-d3".into(),
            true_hyp: "1".into(),
            nu: 20,
            b: 2.5,
            metric: "misid".into(),
            value: Some(0.125),
            se: Some(0.01),
            n_effective: 9000,
            n_nominal: 10000,
            n_truncated: 0,
            bound_value: None,
            seed: 7,
        }];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "scenario_id,true_hyp,nu,b,metric,value,se,n_effective,n_nominal,n_truncated,bound_value,seed"
        );
        assert_eq!(
            lines.next().unwrap(),
            "single_fault-d3,1,20,2.5,misid,0.125,0.01,9000,10000,0,,7"
        );
        std::fs::remove_dir_all(&dir).ok();
    }
}
