//! Run metrics: an append-only CSV and a JSONL mirror.
//!
//! The CSV holds only values that are pure functions of (config, seed), so
//! two identical runs produce byte-identical files; wall-clock timings go to
//! the JSONL mirror only.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::TrainError;

pub struct MetricsWriter {
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<MetricsWriter, TrainError> {
        let open = |name: &str| -> Result<BufWriter<File>, TrainError> {
            let path = dir.join(name);
            File::create(&path)
                .map(BufWriter::new)
                .map_err(|e| TrainError::Io(path.display().to_string(), e.to_string()))
        };
        let mut csv = open("metrics.csv")?;
        let jsonl = open("metrics.jsonl")?;
        writeln!(csv, "step,split,ce,ppl,lr").map_err(io_err)?;
        Ok(MetricsWriter { csv, jsonl })
    }

    pub fn row(
        &mut self,
        step: u64,
        split: &str,
        ce: f64,
        ppl: f64,
        lr: f64,
        wall_ms: u128,
    ) -> Result<(), TrainError> {
        writeln!(self.csv, "{step},{split},{ce:.6},{ppl:.6},{lr:.6e}").map_err(io_err)?;
        writeln!(
            self.jsonl,
            "{{\"step\":{step},\"split\":\"{split}\",\"ce\":{ce:.6},\"ppl\":{ppl:.6},\"lr\":{lr:.6e},\"wall_ms\":{wall_ms}}}"
        )
        .map_err(io_err)?;
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        writeln!(self.jsonl, "{{\"note\":\"{key}\",\"value\":\"{value}\"}}").map_err(io_err)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.csv.flush().map_err(io_err)?;
        self.jsonl.flush().map_err(io_err)
    }
}

fn io_err(e: std::io::Error) -> TrainError {
    TrainError::Io("metrics".into(), e.to_string())
}
