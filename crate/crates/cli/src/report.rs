//! Run reports: one JSON object per invocation, appended to
//! `run_report.jsonl` in the output directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use panorad_core::Result;

pub const REPORT_FILE: &str = "run_report.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
    /// Resident-set high-water mark; absent where the OS does not report it.
    pub peak_memory_bytes: Option<u64>,
    pub outputs: Vec<PathBuf>,
    pub config_hash: String,
    /// Present only when the command failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Collects stage timings and outputs while a command runs.
#[derive(Debug)]
pub struct Recorder {
    command: String,
    start: Instant,
    stages: Vec<StageTiming>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, start: Instant) -> Self {
        Self {
            command: command.to_string(),
            start,
            stages: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Time `f` as stage `name`. Each stage may be recorded once.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        debug_assert!(
            self.stages.iter().all(|s| s.stage != name),
            "stage {name} recorded twice"
        );
        let t = Instant::now();
        let out = f(self);
        self.stages.push(StageTiming {
            stage: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn outputs(&self) -> &[PathBuf] {
        &self.outputs
    }

    pub fn finish(self, config_hash: String, error: Option<String>) -> RunReport {
        RunReport {
            command: self.command,
            stages: self.stages,
            total_seconds: self.start.elapsed().as_secs_f64(),
            peak_memory_bytes: peak_memory_bytes(),
            outputs: self.outputs,
            config_hash,
            error,
        }
    }
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_memory_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn append(report: &RunReport, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(REPORT_FILE);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
    writeln!(f, "{}", serde_json::to_string(report).expect("report serializes"))?;
    Ok(path)
}

pub fn read_all(path: &Path) -> Result<Vec<RunReport>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| panorad_core::Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
