use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 9] = ["epoch", "split", "loss", "ce", "kl", "accuracy", "nll", "entropy", "seconds"];

/// One line of the per-epoch metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub accuracy: f64,
    pub nll: f64,
    pub entropy: f64,
    pub seconds: f64,
}

/// A header plus serialisable rows; the header is written even when there are no rows.
#[derive(Debug, Clone)]
pub struct CsvTable<R> {
    pub header: Vec<String>,
    pub rows: Vec<R>,
}

impl<R: Serialize> CsvTable<R> {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv buffer>", e))?;
        w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_has_header_only() {
        let t: CsvTable<MetricsRow> = CsvTable::new(&METRICS_HEADER);
        assert_eq!(
            String::from_utf8(t.to_bytes().unwrap()).unwrap(),
            "epoch,split,loss,ce,kl,accuracy,nll,entropy,seconds\n"
        );
    }

    #[test]
    fn rows_follow_header() {
        let mut t = CsvTable::new(&METRICS_HEADER);
        t.rows.push(MetricsRow {
            epoch: 1,
            split: "val".into(),
            loss: 0.5,
            ce: 0.5,
            kl: 0.0,
            accuracy: 0.9,
            nll: 0.25,
            entropy: 0.1,
            seconds: 0.0,
        });
        let text = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1,val,0.5,0.5,0.0,0.9,0.25,0.1,0.0");
    }
}
