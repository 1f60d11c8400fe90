//! Minute-return ingestion, the scenario filter, versioned JSON configs and
//! run manifests.

mod scenario;

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveTime, Timelike};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use scenario::{scenario_filter, scenario_to_control, ScenarioSample, ScenarioTag, SCENARIO_CONTEXT_MINUTES};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("missing header")]
    MissingHeader,
    #[error("{} malformed row(s); first: {}", .0.len(), .0.first().map(ToString::to_string).unwrap_or_default())]
    Rows(Vec<RowIssue>),
    #[error("invalid scenario request: {0}")]
    Scenario(String),
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One rejected input line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Continuous trading sessions of one day, as inclusive first/last minute
/// stamps of minute returns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradingSessions {
    pub sessions: Vec<(NaiveTime, NaiveTime)>,
}

impl Default for TradingSessions {
    /// 09:31–11:30 and 13:01–15:00.
    fn default() -> Self {
        let t = |h, m| NaiveTime::from_hms_opt(h, m, 0).expect("valid time");
        Self { sessions: vec![(t(9, 31), t(11, 30)), (t(13, 1), t(15, 0))] }
    }
}

impl TradingSessions {
    /// Index of the session containing `time`.
    pub fn session_of(&self, time: NaiveTime) -> Option<usize> {
        self.sessions.iter().position(|(a, b)| *a <= time && time <= *b)
    }

    pub fn session_minutes(&self, session: usize) -> u32 {
        let (a, b) = self.sessions[session];
        (b - a).num_minutes() as u32 + 1
    }

    pub fn longest_session(&self) -> u32 {
        (0..self.sessions.len()).map(|s| self.session_minutes(s)).max().unwrap_or(0)
    }
}

/// Minute returns with one row per (date, minute) and one column per
/// instrument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinuteReturnMatrix {
    pub instruments: Vec<String>,
    pub rows: Vec<(NaiveDate, NaiveTime)>,
    /// `values[row][instrument]`.
    pub values: Vec<Vec<f64>>,
}

impl MinuteReturnMatrix {
    pub fn column(&self, instrument: &str) -> Option<usize> {
        self.instruments.iter().position(|i| i == instrument)
    }

    pub fn row_of(&self, date: NaiveDate, minute: NaiveTime) -> Option<usize> {
        self.rows.iter().position(|&(d, m)| d == date && m == minute)
    }
}

fn time_of(s: &str) -> Option<NaiveTime> {
    NaiveTime::parse_from_str(s, "%H:%M:%S").or_else(|_| NaiveTime::parse_from_str(s, "%H:%M")).ok()
}

/// Parses the `date,minute,<instrument>...` layout. Every problem is
/// collected with its line number before failing.
pub fn read_minute_returns(reader: impl Read, sessions: &TradingSessions) -> Result<MinuteReturnMatrix, IoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(IoError::MissingHeader),
    };
    if header.len() < 3 || header.get(0).map(str::trim) != Some("date") || header.get(1).map(str::trim) != Some("minute") {
        return Err(IoError::MissingHeader);
    }
    let instruments: Vec<String> = header.iter().skip(2).map(|s| s.trim().to_string()).collect();
    let mut issues = Vec::new();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut problem = |message: String| issues.push(RowIssue { line, message });
        if rec.len() != instruments.len() + 2 {
            problem(format!("expected {} fields, found {}", instruments.len() + 2, rec.len()));
            continue;
        }
        let Ok(date) = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d") else {
            problem(format!("bad date {:?}", &rec[0]));
            continue;
        };
        let Some(minute) = time_of(rec[1].trim()) else {
            problem(format!("bad minute {:?}", &rec[1]));
            continue;
        };
        if sessions.session_of(minute).is_none() {
            problem(format!("minute {minute} is outside trading hours"));
            continue;
        }
        let parsed: Result<Vec<f64>, String> = rec
            .iter()
            .skip(2)
            .zip(&instruments)
            .map(|(cell, name)| match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("non-numeric value {cell:?} for {name}")),
            })
            .collect();
        match parsed {
            Ok(v) => {
                rows.push((date, minute));
                values.push(v);
            }
            Err(e) => problem(e),
        }
    }
    if !issues.is_empty() {
        return Err(IoError::Rows(issues));
    }
    Ok(MinuteReturnMatrix { instruments, rows, values })
}

pub fn load_minute_returns(path: &Path, sessions: &TradingSessions) -> Result<MinuteReturnMatrix, IoError> {
    read_minute_returns(std::fs::File::open(path)?, sessions)
}

pub fn write_minute_returns(writer: impl Write, matrix: &MinuteReturnMatrix) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "minute"].into_iter().map(String::from).chain(matrix.instruments.iter().cloned()))?;
    for ((date, minute), row) in matrix.rows.iter().zip(&matrix.values) {
        let mut rec = vec![date.format("%Y-%m-%d").to_string(), minute.format("%H:%M:%S").to_string()];
        // `{}` prints the shortest string that parses back to the same f64.
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_minute_returns(path: &Path, matrix: &MinuteReturnMatrix) -> Result<(), IoError> {
    write_minute_returns(std::fs::File::create(path)?, matrix)
}

/// Minutes since midnight, for ordering and arithmetic on session times.
pub(crate) fn minute_index(t: NaiveTime) -> u32 {
    t.hour() * 60 + t.minute()
}

pub const CONFIG_VERSION: u64 = 1;

/// Reads a JSON config that must carry `"version": 1`.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T, IoError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(CONFIG_VERSION) => {}
        Some(v) => return Err(IoError::Config(format!("unsupported version {v}"))),
        None => return Err(IoError::Config("missing \"version\" field".into())),
    }
    Ok(serde_json::from_value(value)?)
}

/// Written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// RFC 3339; the only field that differs between identical invocations.
    pub timestamp: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: Option<u64>, outputs: Vec<String>) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            seed,
            timestamp: chrono::Utc::now().to_rfc3339(),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

/// SHA-256 hex digest of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
