use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};

/// One Shapley vector with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: &'static str,
    pub method: Method,
    pub n: u32,
    pub replicate: usize,
    pub eta: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    /// Model evaluations spent, where meaningful.
    pub eval_count: Option<u64>,
    pub wall_time_ms: Option<f64>,
    /// Scalar summary attached to some rows, e.g. the scaled gap.
    pub metric: Option<f64>,
}

impl ResultRow {
    pub fn sum(&self) -> f64 {
        self.eta.iter().sum()
    }
}

/// Rows of one run, all with the same `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub p: usize,
    pub rows: Vec<ResultRow>,
    /// Soft checks that did not hold.
    pub warnings: Vec<String>,
}

impl ResultTable {
    pub fn new(p: usize) -> Self {
        Self { p, rows: Vec::new(), warnings: Vec::new() }
    }

    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        if row.eta.len() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, actual: row.eta.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows_for(&self, method: Method, n: u32) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.method == method && r.n == n)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["experiment", "method", "n", "replicate"].map(String::from).into();
        h.extend((1..=self.p).map(|i| format!("eta_{i}")));
        h.extend((1..=self.p).map(|i| format!("se_{i}")));
        h.extend(["eval_count", "wall_time_ms", "metric"].map(String::from));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec =
                vec![r.experiment.to_string(), r.method.tag().to_string(), r.n.to_string(), r.replicate.to_string()];
            rec.extend(r.eta.iter().map(f64::to_string));
            match &r.std_errors {
                Some(se) => rec.extend(se.iter().map(f64::to_string)),
                None => rec.extend(std::iter::repeat_n(String::new(), self.p)),
            }
            rec.push(r.eval_count.map(|c| c.to_string()).unwrap_or_default());
            rec.push(r.wall_time_ms.map(|t| format!("{t:.3}")).unwrap_or_default());
            rec.push(r.metric.map(|m| m.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// `results.csv` → `results.config.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("config.json")
}

/// Writes the table and the resolved config next to it.
pub fn write_outputs(table: &ResultTable, config: &ExperimentConfig, csv_path: &Path) -> Result<()> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    table.write_csv(std::io::BufWriter::new(std::fs::File::create(csv_path)?))?;
    std::fs::write(sidecar_path(csv_path), config.to_json() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, eta: Vec<f64>) -> ResultRow {
        ResultRow {
            experiment: "fig1",
            method,
            n: 2,
            replicate: 0,
            eta,
            std_errors: None,
            eval_count: Some(8),
            wall_time_ms: None,
            metric: None,
        }
    }

    #[test]
    fn csv_layout() {
        let mut t = ResultTable::new(2);
        t.push(row(Method::FiniteDiff, vec![0.25, 0.75])).unwrap();
        let mut r = row(Method::PermMc, vec![0.5, 0.5]);
        r.std_errors = Some(vec![0.01, 0.02]);
        r.wall_time_ms = Some(1.23456);
        t.push(r).unwrap();
        assert_eq!(
            t.to_csv_string(),
            "experiment,method,n,replicate,eta_1,eta_2,se_1,se_2,eval_count,wall_time_ms,metric\n\
             fig1,finite_diff,2,0,0.25,0.75,,,8,,\n\
             fig1,perm_mc,2,0,0.5,0.5,0.01,0.02,8,1.235,\n"
        );
        assert!(t.push(row(Method::Taylor, vec![1.0])).is_err());
    }

    #[test]
    fn floats_round_trip() {
        let x = 0.1 + 0.2;
        let mut t = ResultTable::new(1);
        t.push(row(Method::Taylor, vec![x])).unwrap();
        let text = t.to_csv_string();
        let field = text.lines().nth(1).unwrap().split(',').nth(4).unwrap();
        assert_eq!(field.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.csv");
        let mut t = ResultTable::new(1);
        t.push(row(Method::Taylor, vec![1.0])).unwrap();
        let cfg = ExperimentConfig::default();
        write_outputs(&t, &cfg, &path).unwrap();
        assert!(path.exists());
        let side = std::fs::read_to_string(dir.path().join("sub/out.config.json")).unwrap();
        assert_eq!(ExperimentConfig::from_json(&side).unwrap(), cfg);
    }
}
