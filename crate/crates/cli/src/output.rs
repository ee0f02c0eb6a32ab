//! Run directories, manifests and CSV tables.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fcme_core::metrics::MetricRecord;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Ok,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    /// Fully resolved: every derived value is spelled out.
    pub config: ExperimentConfig,
    pub seed: u64,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl RunManifest {
    pub fn start(run_id: &str, command: &str, config: ExperimentConfig) -> Self {
        Self {
            run_id: run_id.to_string(),
            command: command.to_string(),
            seed: config.seed,
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: None,
            status: Status::Running,
            message: None,
        }
    }

    pub fn finish(&mut self, outcome: &CliResult<()>) {
        self.finished_unix = Some(now());
        (self.status, self.message) = match outcome {
            Ok(()) => (Status::Ok, None),
            Err(e @ CliError::Diverged { .. }) => (Status::Diverged, Some(e.to_string())),
            Err(e) => (Status::Failed, Some(e.to_string())),
        };
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?)
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Creates `root/<stem>`, or `root/<stem>-2`, `-3`, ... if taken; returns
/// the directory and its final name.
pub fn allocate_dir(root: &Path, stem: &str) -> CliResult<(PathBuf, String)> {
    std::fs::create_dir_all(root)?;
    for k in 1.. {
        let name = if k == 1 { stem.to_string() } else { format!("{stem}-{k}") };
        let dir = root.join(&name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok((dir, name)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("unbounded search")
}

#[derive(Serialize)]
struct MetricRow<'a> {
    run_id: &'a str,
    iteration: usize,
    t: f64,
    metric: &'a str,
    value: f64,
    stderr: Option<f64>,
}

pub fn write_metrics(path: &Path, run_id: &str, records: &[MetricRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(MetricRow { run_id, iteration: r.iteration, t: r.t, metric: &r.name, value: r.value, stderr: r.stderr })?;
    }
    if records.is_empty() {
        w.write_record(["run_id", "iteration", "t", "metric", "value", "stderr"])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct MetricRowOwned {
    #[allow(dead_code)]
    run_id: String,
    iteration: usize,
    t: f64,
    metric: String,
    value: f64,
    stderr: Option<f64>,
}

pub fn read_metrics(path: &Path) -> CliResult<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<MetricRowOwned>()
        .map(|row| {
            let row = row?;
            Ok(MetricRecord::new(row.metric, row.iteration, row.t, row.value, row.stderr))
        })
        .collect()
}

/// Writes a header and rows of numbers (or text) as CSV.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
