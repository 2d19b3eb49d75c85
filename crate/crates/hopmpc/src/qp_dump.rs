//! JSON dump of a QP for offline reproduction. Floats round-trip exactly.

use std::path::Path;

use hopmpc_core::qp::{CscMatrix, QpError, QpProblem};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid problem: {0}")]
    Problem(#[from] QpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Csc {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl From<&CscMatrix> for Csc {
    fn from(m: &CscMatrix) -> Self {
        Self {
            nrows: m.nrows,
            ncols: m.ncols,
            col_ptr: m.col_ptr.clone(),
            row_idx: m.row_idx.clone(),
            values: m.values.clone(),
        }
    }
}

impl From<Csc> for CscMatrix {
    fn from(m: Csc) -> Self {
        CscMatrix {
            nrows: m.nrows,
            ncols: m.ncols,
            col_ptr: m.col_ptr,
            row_idx: m.row_idx,
            values: m.values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dump {
    format: String,
    /// Upper triangle of the cost matrix.
    p: Csc,
    q: Vec<f64>,
    a: Csc,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

const FORMAT: &str = "hopmpc-qp v1";

pub fn to_json(prob: &QpProblem) -> String {
    let d = Dump {
        format: FORMAT.into(),
        p: (&prob.p).into(),
        q: prob.q.clone(),
        a: (&prob.a).into(),
        lower: prob.lower.clone(),
        upper: prob.upper.clone(),
    };
    serde_json::to_string_pretty(&d).expect("finite problem data serializes")
}

pub fn from_json(text: &str) -> Result<QpProblem, DumpError> {
    let d: Dump = serde_json::from_str(text)?;
    if d.format != FORMAT {
        return Err(DumpError::Io(std::io::Error::other(format!(
            "unsupported format `{}`",
            d.format
        ))));
    }
    Ok(QpProblem::new(d.p.into(), d.q, d.a.into(), d.lower, d.upper)?)
}

pub fn save(prob: &QpProblem, path: &Path) -> Result<(), DumpError> {
    std::fs::write(path, to_json(prob))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<QpProblem, DumpError> {
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hopmpc_core::qp::INF_BOUND;

    #[test]
    fn round_trip_is_exact() {
        let p = CscMatrix {
            nrows: 2,
            ncols: 2,
            col_ptr: vec![0, 1, 3],
            row_idx: vec![0, 0, 1],
            values: vec![4.0 / 3.0, 0.1, 2.0 + 1e-15],
        };
        let a = CscMatrix {
            nrows: 1,
            ncols: 2,
            col_ptr: vec![0, 1, 2],
            row_idx: vec![0, 0],
            values: vec![1.0, -0.7],
        };
        let prob = QpProblem::new(p, vec![0.3, -1.0 / 7.0], a, vec![-INF_BOUND], vec![0.25]).unwrap();
        assert_eq!(from_json(&to_json(&prob)).unwrap(), prob);
    }
}
