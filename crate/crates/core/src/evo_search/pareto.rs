use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Individual;
use crate::error::{Error, Result};

/// One line of the front file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub v0: i64,
    pub v1: i64,
    pub v2: i64,
    pub v3: i64,
    pub v4: f64,
    pub v5: f64,
    pub params: usize,
    pub err_pct: f64,
    pub flops: u64,
    pub latency_ms: Option<f64>,
    pub depth: usize,
}

impl From<&Individual> for ParetoRow {
    fn from(i: &Individual) -> Self {
        let g = &i.genome;
        Self {
            v0: g.v0,
            v1: g.v1,
            v2: g.v2,
            v3: g.v3,
            v4: g.v4,
            v5: g.v5,
            params: i.analytics.params,
            err_pct: i.err * 100.0,
            flops: i.analytics.flops,
            latency_ms: i.analytics.latency_ms,
            depth: i.analytics.depth,
        }
    }
}

pub fn write_pareto_csv(path: &Path, rows: &[ParetoRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pareto_csv(path: &Path) -> Result<Vec<ParetoRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        rows.push(row.map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: i as u64 + 1,
            reason: format!("row {}: {e}", i + 1),
        })?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pareto.csv");
        let rows = vec![ParetoRow {
            v0: 50,
            v1: 6,
            v2: 2,
            v3: 3,
            v4: 1.2,
            v5: 1.09,
            params: 640_000,
            err_pct: 3.19,
            flops: 123,
            latency_ms: None,
            depth: 11,
        }];
        write_pareto_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("v0,v1,v2,v3,v4,v5,params,err_pct,flops,latency_ms,depth\n"));
        assert_eq!(read_pareto_csv(&path).unwrap(), rows);
        std::fs::write(&path, "v0,v1\n1,x\n").unwrap();
        assert_eq!(read_pareto_csv(&path).unwrap_err().exit_code(), 3);
    }
}
