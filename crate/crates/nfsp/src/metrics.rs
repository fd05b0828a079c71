//! Run artifacts: per-update training metrics and periodic probe results,
//! stored as plain CSV so runs can be inspected and resumed with ordinary
//! tools. Floats are written with Rust's shortest round-trip formatting,
//! so read(write(x)) == x bit for bit.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path} line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: expected header '{expected}', found '{found}'")]
    Header { path: String, expected: String, found: String },
}

pub const METRICS_HEADER: &str = "update,process,games,l_policy,l_entropy,l_value,grad_norm,\
                                  mean_abs_adv,mean_ratio,l_sl,fallbacks,incidents,mean_reward";
pub const PROBES_HEADER: &str = "update,games,nashconv,win_vs_simple,win_vs_random";

/// One training-loop row, one per process per update.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub update: u64,
    pub process: usize,
    /// Cumulative games experienced by the trained bundle.
    pub games: u64,
    pub l_policy: f64,
    pub l_entropy: f64,
    pub l_value: f64,
    pub grad_norm: f64,
    pub mean_abs_adv: f64,
    pub mean_ratio: f64,
    /// Absent outside NFSP mode and while the reservoir is empty.
    pub l_sl: Option<f64>,
    pub fallbacks: u64,
    pub incidents: u64,
    pub mean_reward: f64,
}

/// One evaluation probe row. Enumerable games fill `nashconv`; MicroRTS
/// runs fill the scripted-opponent win rates instead.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub update: u64,
    pub games: u64,
    pub nashconv: Option<f64>,
    pub win_vs_simple: Option<f64>,
    pub win_vs_random: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

impl MetricsRow {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.process,
            self.games,
            self.l_policy,
            self.l_entropy,
            self.l_value,
            self.grad_norm,
            self.mean_abs_adv,
            self.mean_ratio,
            opt(self.l_sl),
            self.fallbacks,
            self.incidents,
            self.mean_reward,
        )
    }

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        if f.len() != 13 {
            return Err(format!("expected 13 fields, found {}", f.len()));
        }
        Ok(MetricsRow {
            update: parse(f[0])?,
            process: parse(f[1])?,
            games: parse(f[2])?,
            l_policy: parse(f[3])?,
            l_entropy: parse(f[4])?,
            l_value: parse(f[5])?,
            grad_norm: parse(f[6])?,
            mean_abs_adv: parse(f[7])?,
            mean_ratio: parse(f[8])?,
            l_sl: parse_opt(f[9])?,
            fallbacks: parse(f[10])?,
            incidents: parse(f[11])?,
            mean_reward: parse(f[12])?,
        })
    }
}

impl ProbeRow {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.update,
            self.games,
            opt(self.nashconv),
            opt(self.win_vs_simple),
            opt(self.win_vs_random),
        )
    }

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        if f.len() != 5 {
            return Err(format!("expected 5 fields, found {}", f.len()));
        }
        Ok(ProbeRow {
            update: parse(f[0])?,
            games: parse(f[1])?,
            nashconv: parse_opt(f[2])?,
            win_vs_simple: parse_opt(f[3])?,
            win_vs_random: parse_opt(f[4])?,
        })
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("bad field '{s}'"))
}

fn parse_opt(s: &str) -> Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    parse(s).map(Some)
}

/// Line-buffered CSV appender; `create` truncates and writes the header,
/// `append` continues an existing file after verifying its header.
pub struct CsvFile {
    out: BufWriter<File>,
    header: &'static str,
}

fn normalized(header: &str) -> String {
    header.split_whitespace().collect()
}

impl CsvFile {
    pub fn create(path: &Path, header: &'static str) -> Result<Self, MetricsError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", normalized(header))?;
        out.flush()?;
        Ok(CsvFile { out, header })
    }

    pub fn append(path: &Path, header: &'static str) -> Result<Self, MetricsError> {
        if !path.exists() {
            return Self::create(path, header);
        }
        let first = BufReader::new(File::open(path)?)
            .lines()
            .next()
            .transpose()?
            .unwrap_or_default();
        if first != normalized(header) {
            return Err(MetricsError::Header {
                path: path.display().to_string(),
                expected: normalized(header),
                found: first,
            });
        }
        let out = BufWriter::new(OpenOptions::new().append(true).open(path)?);
        Ok(CsvFile { out, header })
    }

    fn write_line(&mut self, line: &str) -> Result<(), MetricsError> {
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn push_metrics(&mut self, row: &MetricsRow) -> Result<(), MetricsError> {
        debug_assert_eq!(self.header, METRICS_HEADER);
        self.write_line(&row.to_line())
    }

    pub fn push_probe(&mut self, row: &ProbeRow) -> Result<(), MetricsError> {
        debug_assert_eq!(self.header, PROBES_HEADER);
        self.write_line(&row.to_line())
    }
}

fn read_rows<T>(
    path: &Path,
    header: &'static str,
    from_fields: fn(&[&str]) -> Result<T, String>,
) -> Result<Vec<T>, MetricsError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != normalized(header) {
                return Err(MetricsError::Header {
                    path: path.display().to_string(),
                    expected: normalized(header),
                    found: line,
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        rows.push(from_fields(&fields).map_err(|msg| MetricsError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        })?);
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    read_rows(path, METRICS_HEADER, MetricsRow::from_fields)
}

pub fn read_probes(path: &Path) -> Result<Vec<ProbeRow>, MetricsError> {
    read_rows(path, PROBES_HEADER, ProbeRow::from_fields)
}
