//! Versioned CSV tables.
//!
//! Every table starts with a `# hopmpc-<kind> v<version>` line followed by a
//! CSV header that must match the row type column for column. Readers reject
//! anything else and report the offending line.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("{0} is empty")]
    Empty(String),
}

fn malformed(line: u64, reason: impl ToString) -> TableError {
    TableError::Malformed {
        line,
        reason: reason.to_string(),
    }
}

pub trait Schema: Serialize + DeserializeOwned {
    const KIND: &'static str;
    const VERSION: u32;
    const COLUMNS: &'static [&'static str];

    fn magic() -> String {
        format!("# hopmpc-{} v{}", Self::KIND, Self::VERSION)
    }
}

pub fn write_table<T: Schema, W: Write>(rows: &[T], mut out: W) -> Result<(), TableError> {
    writeln!(out, "{}", T::magic())?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(T::COLUMNS).map_err(io_err)?;
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

fn io_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

pub fn read_table<T: Schema, R: Read>(mut input: R) -> Result<Vec<T>, TableError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let (first, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let first = first.trim_end_matches('\r');
    if first != T::magic() {
        let reason = if first.starts_with(&format!("# hopmpc-{} ", T::KIND)) {
            format!("unsupported version `{first}`, expected `{}`", T::magic())
        } else {
            format!("expected `{}`", T::magic())
        };
        return Err(malformed(1, reason));
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| malformed(2, e))?;
    if header.iter().ne(T::COLUMNS.iter().copied()) {
        return Err(malformed(
            2,
            format!("columns `{}` do not match `{}`", header.iter().collect::<Vec<_>>().join(","), T::COLUMNS.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<T>() {
        rows.push(rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line()) + 1;
            malformed(line, e)
        })?);
    }
    Ok(rows)
}

pub fn save_table<T: Schema>(rows: &[T], path: &Path) -> Result<(), TableError> {
    let f = std::fs::File::create(path)?;
    write_table(rows, std::io::BufWriter::new(f))
}

pub fn load_table<T: Schema>(path: &Path) -> Result<Vec<T>, TableError> {
    read_table(std::fs::File::open(path)?)
}

/// One plant step of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub seed: u64,
    pub ups: bool,
    /// Index of the control tick whose command was in force.
    pub tick: u64,
    pub t: f64,
    pub stance: bool,
    pub px: f64,
    pub pz: f64,
    pub theta: f64,
    pub vx: f64,
    pub vz: f64,
    pub theta_dot: f64,
    pub q_hip: f64,
    pub q_knee: f64,
    pub qd_hip: f64,
    pub qd_knee: f64,
    pub tau_hip: f64,
    pub tau_knee: f64,
    /// Knee spring torque.
    pub tau_spring: f64,
    pub fx: f64,
    pub fz: f64,
    /// Metered positive electrical power (W).
    pub power: f64,
    pub v_des: f64,
    /// Sample inside the measurement window.
    pub measured: bool,
}

impl Schema for LogRow {
    const KIND: &'static str = "runlog";
    const VERSION: u32 = 1;
    const COLUMNS: &'static [&'static str] = &[
        "seed", "ups", "tick", "t", "stance", "px", "pz", "theta", "vx", "vz", "theta_dot", "q_hip", "q_knee", "qd_hip", "qd_knee",
        "tau_hip", "tau_knee", "tau_spring", "fx", "fz", "power", "v_des", "measured",
    ];
}

/// Controller telemetry of one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRow {
    pub tick: u64,
    pub t: f64,
    pub stance: bool,
    pub solved: bool,
    pub srb_iterations: u64,
    pub srb_status: String,
    pub kino_iterations: u64,
    pub kino_status: String,
    pub max_violation: f64,
    pub objective: f64,
    pub degraded: bool,
    pub ik_clamped: bool,
    pub released: bool,
    pub planned_fx: f64,
    pub planned_fz: f64,
    pub alpha: f64,
    /// Wall-clock duration of the tick (microseconds).
    pub wall_us: f64,
}

impl Schema for TickRow {
    const KIND: &'static str = "ticks";
    const VERSION: u32 = 1;
    const COLUMNS: &'static [&'static str] = &[
        "tick", "t", "stance", "solved", "srb_iterations", "srb_status", "kino_iterations", "kino_status",
        "max_violation", "objective", "degraded", "ik_clamped", "released", "planned_fx", "planned_fz", "alpha",
        "wall_us",
    ];
}

/// Measured flight apex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApexRow {
    pub t: f64,
    pub x: f64,
    pub height: f64,
    pub velocity: f64,
    pub v_des: f64,
    pub pitch: f64,
}

impl Schema for ApexRow {
    const KIND: &'static str = "apexes";
    const VERSION: u32 = 1;
    const COLUMNS: &'static [&'static str] = &["t", "x", "height", "velocity", "v_des", "pitch"];
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> ApexRow {
        ApexRow {
            t,
            x: 0.1 * t,
            height: 0.45 + 1e-17,
            velocity: 1.0 / 3.0,
            v_des: 1.0,
            pitch: -0.0123,
        }
    }

    #[test]
    fn tables_round_trip_exactly() {
        let rows: Vec<ApexRow> = (0..5).map(|i| row(i as f64 * 0.47)).collect();
        let mut buf = Vec::new();
        write_table(&rows, &mut buf).unwrap();
        assert_eq!(read_table::<ApexRow, _>(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn wrong_version_and_columns_are_rejected() {
        let mut buf = Vec::new();
        write_table(&[row(0.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let err = read_table::<ApexRow, _>(text.replace("v1", "v2").as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1") && err.to_string().contains("v2"), "{err}");
        let err = read_table::<ApexRow, _>(text.replace("pitch", "roll").as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(read_table::<LogRow, _>(text.as_bytes()).is_err());
    }

    #[test]
    fn malformed_row_names_its_line() {
        let rows: Vec<ApexRow> = (0..4).map(|i| row(i as f64)).collect();
        let mut buf = Vec::new();
        write_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[4] = "1,2,x,4,5,6".into();
        let err = read_table::<ApexRow, _>(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            TableError::Malformed { line, .. } => assert_eq!(line, 5),
            other => panic!("{other}"),
        }
    }
}
