//! Append-only JSONL result stores.
//!
//! Every line is one self-describing [`RunRecord`]. Readers check the
//! schema version of each line before decoding it.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{SpeedupStats, TimingSample};
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::tensor::{Layout, Problem};
use crate::tuner::CandidateResult;
use crate::verify::VerifySummary;

pub const SCHEMA_VERSION: u32 = 1;

/// Where and how a record was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub host: String,
    pub workers: usize,
    pub clock_source: String,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn capture(clock_source: &str) -> Environment {
        let host = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
            .map(|h| h.trim().to_string())
            .filter(|h| !h.is_empty())
            .unwrap_or_else(|| "unknown".into());
        Environment {
            host,
            workers: rayon::current_num_threads(),
            clock_source: clock_source.into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Verify,
    Bench,
    Tune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    /// RFC 3339 UTC.
    pub timestamp: String,
    pub kind: RecordKind,
    pub problem: Problem,
    pub layout: Layout,
    pub mode: String,
    pub seed: u64,
    pub params: Option<KernelParams>,
    pub verify: Option<VerifySummary>,
    pub speedup: Option<SpeedupStats>,
    /// Nanoseconds per measured round (tuning) or per custom call (bench).
    pub round_times: Vec<u64>,
    pub samples: Vec<TimingSample>,
    pub candidate: Option<CandidateResult>,
    /// Marks the selected configuration in a tuning store.
    pub winner: bool,
    pub environment: Environment,
    /// Free-form settings worth keeping next to the numbers (input
    /// distribution, interval range, reward normalization, ...).
    pub notes: serde_json::Value,
}

impl RunRecord {
    pub fn new(kind: RecordKind, problem: Problem, mode: &str, seed: u64, environment: Environment) -> RunRecord {
        RunRecord {
            schema_version: SCHEMA_VERSION,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            kind,
            problem,
            layout: problem.layout,
            mode: mode.into(),
            seed,
            params: None,
            verify: None,
            speedup: None,
            round_times: Vec::new(),
            samples: Vec::new(),
            candidate: None,
            winner: false,
            environment,
            notes: serde_json::Value::Null,
        }
    }
}

/// Appends records, one JSON object per line. Existing lines are never touched.
pub fn append_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&buf)?;
    f.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

/// Reads every record. Blank lines are skipped; anything else that fails to
/// decode is reported with its line number.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let f = std::fs::File::open(path)?;
    let shown = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedStore {
            path: shown.clone(),
            line: i + 1,
            reason,
        };
        let probe: VersionProbe = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        match probe.schema_version {
            None => return Err(malformed("missing schema_version".into())),
            Some(v) if v != SCHEMA_VERSION => {
                return Err(Error::SchemaMismatch {
                    expected: SCHEMA_VERSION,
                    found: v,
                })
            }
            Some(_) => {}
        }
        out.push(serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?);
    }
    Ok(out)
}
