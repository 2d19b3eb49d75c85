//! Versioned CSV serialization of a gait library.
//!
//! ```text
//! # hopmpc-gaitlib v1
//! # mass=2.5 stiffness=1500 rest_length=0.32 gravity=9.81 hash=<sha256>
//! # grid min=-3 max=3 step=0.1
//! commanded_speed,apex_height,apex_velocity,alpha,gain_height,gain_velocity
//! ...
//! ```
//!
//! Floats are written in shortest round-trip form, so a read gives back the
//! identical library. The hash covers the SLIP parameters the library was
//! solved for and is checked on load.

use std::io::{Read, Write};
use std::path::Path;

use hopmpc_core::slip::{ApexState, GaitEntry, GaitLibrary, SlipParams, SpeedGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &str = "# hopmpc-gaitlib v1";

#[derive(Debug, Error)]
pub enum LibraryFileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("parameter hash mismatch: file says {stored}, parameters hash to {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("library was built for different parameters ({0})")]
    WrongParams(String),
}

fn malformed(line: u64, reason: impl ToString) -> LibraryFileError {
    LibraryFileError::Malformed {
        line,
        reason: reason.to_string(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    commanded_speed: f64,
    apex_height: f64,
    apex_velocity: f64,
    alpha: f64,
    gain_height: f64,
    gain_velocity: f64,
}

/// SHA-256 over the bit patterns of the SLIP parameters, hex encoded.
pub fn params_hash(p: &SlipParams) -> String {
    let mut h = Sha256::new();
    for v in [p.mass, p.stiffness, p.rest_length, p.gravity] {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_library<W: Write>(lib: &GaitLibrary, grid: &SpeedGrid, mut out: W) -> Result<(), LibraryFileError> {
    let p = &lib.params;
    writeln!(out, "{MAGIC}")?;
    writeln!(
        out,
        "# mass={} stiffness={} rest_length={} gravity={} hash={}",
        p.mass,
        p.stiffness,
        p.rest_length,
        p.gravity,
        params_hash(p)
    )?;
    writeln!(out, "# grid min={} max={} step={}", grid.min, grid.max, grid.step)?;
    let mut w = csv::Writer::from_writer(out);
    for e in &lib.entries {
        w.serialize(Row {
            commanded_speed: e.commanded_speed,
            apex_height: e.apex.height,
            apex_velocity: e.apex.velocity,
            alpha: e.alpha,
            gain_height: e.gain[0],
            gain_velocity: e.gain[1],
        })
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `key=value` pairs of a header line after its leading tag.
fn header_fields<'a>(line: &'a str, tag: &str, lineno: u64) -> Result<Vec<(&'a str, &'a str)>, LibraryFileError> {
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| malformed(lineno, format!("expected header starting with `{tag}`")))?;
    rest.split_whitespace()
        .map(|kv| kv.split_once('=').ok_or_else(|| malformed(lineno, format!("bad field `{kv}`"))))
        .collect()
}

fn field<'a>(fields: &[(&str, &'a str)], key: &str, lineno: u64) -> Result<&'a str, LibraryFileError> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| malformed(lineno, format!("missing `{key}`")))
}

fn number(fields: &[(&str, &str)], key: &str, lineno: u64) -> Result<f64, LibraryFileError> {
    field(fields, key, lineno)?
        .parse()
        .map_err(|e| malformed(lineno, format!("`{key}`: {e}")))
}

pub fn read_library<R: Read>(mut input: R) -> Result<(GaitLibrary, SpeedGrid), LibraryFileError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim_end() == MAGIC => {}
        Some(l) if l.starts_with("# hopmpc-gaitlib") => {
            return Err(malformed(1, format!("unsupported version `{}`", l.trim_end())))
        }
        _ => return Err(malformed(1, format!("missing `{MAGIC}` header"))),
    }
    let pline = lines.next().ok_or_else(|| malformed(2, "missing parameter header"))?;
    let pf = header_fields(pline, "#", 2)?;
    let params = SlipParams {
        mass: number(&pf, "mass", 2)?,
        stiffness: number(&pf, "stiffness", 2)?,
        rest_length: number(&pf, "rest_length", 2)?,
        gravity: number(&pf, "gravity", 2)?,
    };
    let stored = field(&pf, "hash", 2)?;
    let computed = params_hash(&params);
    if stored != computed {
        return Err(LibraryFileError::HashMismatch {
            stored: stored.to_string(),
            computed,
        });
    }
    let gline = lines.next().ok_or_else(|| malformed(3, "missing grid header"))?;
    let gf = header_fields(gline, "# grid", 3)?;
    let grid = SpeedGrid {
        min: number(&gf, "min", 3)?,
        max: number(&gf, "max", 3)?,
        step: number(&gf, "step", 3)?,
    };

    let body: String = text.lines().skip(3).flat_map(|l| [l, "\n"]).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut entries = Vec::new();
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line()) + 3;
            malformed(line, e)
        })?;
        entries.push(GaitEntry {
            commanded_speed: row.commanded_speed,
            apex: ApexState::new(row.apex_height, row.apex_velocity),
            alpha: row.alpha,
            gain: [row.gain_height, row.gain_velocity],
        });
    }
    let expected = grid.speeds();
    if entries.len() != expected.len() {
        return Err(malformed(
            4 + entries.len() as u64,
            format!("grid has {} speeds but the file holds {} entries", expected.len(), entries.len()),
        ));
    }
    for (i, (e, s)) in entries.iter().zip(&expected).enumerate() {
        if e.commanded_speed != *s {
            return Err(malformed(5 + i as u64, format!("speed {} does not match grid value {s}", e.commanded_speed)));
        }
    }
    Ok((GaitLibrary { params, entries }, grid))
}

pub fn save(lib: &GaitLibrary, grid: &SpeedGrid, path: &Path) -> Result<(), LibraryFileError> {
    let f = std::fs::File::create(path)?;
    write_library(lib, grid, std::io::BufWriter::new(f))
}

/// Load a library and check that it was solved for `params`.
pub fn load(path: &Path, params: &SlipParams) -> Result<GaitLibrary, LibraryFileError> {
    let (lib, _) = read_library(std::fs::File::open(path)?)?;
    if lib.params != *params {
        return Err(LibraryFileError::WrongParams(format!(
            "file {:?}, expected {:?}",
            lib.params, params
        )));
    }
    Ok(lib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hopmpc_core::slip::{build_gait_library, LibraryOptions};

    fn small() -> (GaitLibrary, SpeedGrid) {
        let grid = SpeedGrid {
            min: 0.0,
            max: 1.0,
            step: 0.5,
        };
        let opts = LibraryOptions {
            grid,
            ..Default::default()
        };
        (build_gait_library(&SlipParams::default(), &opts).unwrap(), grid)
    }

    #[test]
    fn narrowed_grid_round_trips_exactly() {
        let (lib, grid) = small();
        assert_eq!(lib.entries.len(), 3);
        let mut buf = Vec::new();
        write_library(&lib, &grid, &mut buf).unwrap();
        let (back, g) = read_library(buf.as_slice()).unwrap();
        assert_eq!(back, lib);
        assert_eq!(g, grid);
    }

    #[test]
    fn tampered_params_fail_the_hash() {
        let (lib, grid) = small();
        let mut buf = Vec::new();
        write_library(&lib, &grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("stiffness=1500", "stiffness=1600");
        assert!(matches!(
            read_library(text.as_bytes()),
            Err(LibraryFileError::HashMismatch { .. })
        ));
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let (lib, grid) = small();
        let mut buf = Vec::new();
        write_library(&lib, &grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[5] = "0.5,abc,0,0,0,0";
        let err = read_library(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            LibraryFileError::Malformed { line, .. } => assert_eq!(line, 6),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn version_is_checked() {
        let err = read_library("# hopmpc-gaitlib v9\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("v9"));
        assert!(read_library("speed\n".as_bytes()).is_err());
    }
}
