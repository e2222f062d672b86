use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::train::{LearningTrace, TraceRow};

/// Column order of the CSV export.
pub const CSV_HEADER: [&str; 8] = [
    "iter",
    "eta",
    "step_drift",
    "cum_drift",
    "bound",
    "min_value_gain",
    "solver_iters",
    "safeguards",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    /// One row per iteration.
    Csv,
    /// JSON with the run configuration, per-row details, the final policy
    /// and the oracle.
    Structured,
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "structured" | "json" => Ok(Self::Structured),
            _ => Err(Error::UnknownName {
                vocabulary: "trace format",
                name: s.to_string(),
            }),
        }
    }
}

pub fn write_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidConfig(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn export_trace(trace: &LearningTrace, format: TraceFormat, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        TraceFormat::Csv => write_csv(&trace.rows, &mut out)?,
        TraceFormat::Structured => {
            serde_json::to_writer_pretty(&mut out, trace)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// A trace read back from disk.
#[derive(Debug, Clone)]
pub enum LoadedTrace {
    Rows(Vec<TraceRow>),
    Full(Box<LearningTrace>),
}

impl LoadedTrace {
    pub fn rows(&self) -> &[TraceRow] {
        match self {
            Self::Rows(rows) => rows,
            Self::Full(trace) => &trace.rows,
        }
    }
}

/// Reads either export format; JSON is recognised by its leading `{`.
pub fn load_trace(path: &Path) -> Result<LoadedTrace> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    if text.trim_start().starts_with('{') {
        Ok(LoadedTrace::Full(Box::new(serde_json::from_str(&text)?)))
    } else {
        Ok(LoadedTrace::Rows(read_csv(text.as_bytes())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DriftKind, DriftSpec};
    use crate::env::EnvName;
    use crate::experiment::{run_training, RunConfig};
    use crate::neighbourhood::NeighbourhoodKind;

    fn trace(iters: usize) -> LearningTrace {
        let cfg = RunConfig::new(
            EnvName::Chain,
            DriftSpec::of(DriftKind::Kl),
            NeighbourhoodKind::AvgKlBall,
            iters,
        )
        .unwrap();
        run_training(&cfg).unwrap()
    }

    #[test]
    fn csv_has_fixed_header_and_initial_row() {
        let t = trace(3);
        let mut buf = Vec::new();
        write_csv(&t.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,eta,step_drift,cum_drift,bound,min_value_gain,solver_iters,safeguards"
        );
        assert_eq!(lines.count(), 4);
        assert!(!text.contains(';'));
        let back = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, t.rows);
    }

    #[test]
    fn structured_round_trip() {
        let t = trace(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.json");
        export_trace(&t, TraceFormat::Structured, &path).unwrap();
        match load_trace(&path).unwrap() {
            LoadedTrace::Full(back) => assert_eq!(*back, t),
            LoadedTrace::Rows(_) => panic!("expected a structured trace"),
        }
        let rerun = run_training(&t.config).unwrap();
        assert_eq!(rerun, t);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
