//! Append-only metrics CSV with header
//! `run_id,phase,epoch,split,loss,accuracy,wall_time_sec,seed`.

use std::fs::{self, OpenOptions};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const HEADER: &str = "run_id,phase,epoch,split,loss,accuracy,wall_time_sec,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    /// `<dataset>:<arm>`, e.g. `mnist:developmental`.
    pub phase: String,
    pub epoch: u64,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_time_sec: f64,
    /// Master seed of the run.
    pub seed: u64,
}

pub fn read(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read metrics {}", path.display()))?;
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != HEADER {
        bail!("{}: unexpected header `{header}`", path.display());
    }
    reader
        .deserialize()
        .collect::<Result<Vec<MetricsRecord>, _>>()
        .with_context(|| format!("malformed metrics {}", path.display()))
}

/// Appends `records`, writing the header for a new file. A run id that is
/// already present is refused so each (run, epoch, split) stays unique.
pub fn append(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let exists = path.exists() && fs::metadata(path)?.len() > 0;
    if exists {
        let existing = read(path)?;
        for r in records {
            if existing.iter().any(|e| e.run_id == r.run_id) {
                bail!("run_id `{}` already present in {}; pass --run-id", r.run_id, path.display());
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    let mut writer = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// One epoch of a paired developmental/random comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub epoch: u64,
    pub dev_accuracy: f64,
    pub rand_accuracy: f64,
    /// `dev_accuracy - rand_accuracy`
    pub delta: f64,
}

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_ablation(path: &Path) -> Result<Vec<AblationRow>> {
    csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?
        .deserialize()
        .collect::<Result<Vec<AblationRow>, _>>()
        .with_context(|| format!("malformed ablation table {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(run: &str, epoch: u64) -> MetricsRecord {
        MetricsRecord {
            run_id: run.into(),
            phase: "mnist:developmental".into(),
            epoch,
            split: "test".into(),
            loss: 0.25,
            accuracy: 0.9,
            wall_time_sec: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        append(&p, &[rec("a", 0), rec("a", 1)]).unwrap();
        append(&p, &[rec("b", 0)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(HEADER));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read(&p).unwrap(), vec![rec("a", 0), rec("a", 1), rec("b", 0)]);
    }

    #[test]
    fn duplicate_run_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        append(&p, &[rec("a", 0)]).unwrap();
        let e = append(&p, &[rec("a", 1)]).unwrap_err();
        assert!(e.to_string().contains("already present"));
    }
}
