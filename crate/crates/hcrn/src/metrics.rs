//! Append-only metrics stream: one structured text record per evaluation
//! event.

use std::fmt;
use std::io::Write;

/// One evaluation event.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub epoch: usize,
    pub split: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
    /// Seconds since run start; excluded from determinism comparisons.
    pub wallclock: f64,
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} split={} task={} metric={} value={:.6} wallclock={:.3}",
            self.epoch, self.split, self.task, self.metric, self.value, self.wallclock
        )
    }
}

impl Record {
    /// The deterministic part of the record, used for run-identity checks.
    pub fn key(&self) -> (usize, String, String, String, String) {
        (
            self.epoch,
            self.split.clone(),
            self.task.clone(),
            self.metric.clone(),
            format!("{:.12}", self.value),
        )
    }
}

/// Collects records and optionally appends them to a log file as they come.
pub struct MetricsSink {
    pub records: Vec<Record>,
    file: Option<std::fs::File>,
    start: std::time::Instant,
    pub quiet: bool,
}

impl MetricsSink {
    pub fn in_memory() -> Self {
        MetricsSink {
            records: Vec::new(),
            file: None,
            start: std::time::Instant::now(),
            quiet: true,
        }
    }

    pub fn with_file(path: &std::path::Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(MetricsSink {
            records: Vec::new(),
            file: Some(file),
            start: std::time::Instant::now(),
            quiet: false,
        })
    }

    pub fn emit(&mut self, epoch: usize, split: &str, task: &str, metric: &str, value: f64) {
        let record = Record {
            epoch,
            split: split.to_string(),
            task: task.to_string(),
            metric: metric.to_string(),
            value,
            wallclock: self.start.elapsed().as_secs_f64(),
        };
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{record}");
        }
        if !self.quiet {
            println!("{record}");
        }
        self.records.push(record);
    }

    /// Deterministic fingerprint of the stream (wallclock excluded).
    pub fn keys(&self) -> Vec<(usize, String, String, String, String)> {
        self.records.iter().map(Record::key).collect()
    }
}
