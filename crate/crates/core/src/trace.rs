//! CSV form of a solve trace.
//!
//! Columns, in order: `k, alpha, theta, f, v, merit, step_norm, lambda_inf,
//! kkt_stationarity, kkt_comp, x_0, …, x_{n−1}`. Floats are written with 17
//! significant digits so that a written trace reads back bit-identically.

use std::io::{Read, Write};

use nalgebra::DVector;
use thiserror::Error;

use crate::driver::IterationRecord;

pub const FIXED_COLUMNS: [&str; 10] = [
    "k",
    "alpha",
    "theta",
    "f",
    "v",
    "merit",
    "step_norm",
    "lambda_inf",
    "kkt_stationarity",
    "kkt_comp",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unexpected header: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub alpha: f64,
    pub theta: f64,
    pub f: f64,
    pub v: f64,
    pub merit: f64,
    pub step_norm: f64,
    pub lambda_inf: f64,
    pub kkt_stationarity: f64,
    pub kkt_comp: f64,
    pub x: DVector<f64>,
}

impl From<&IterationRecord> for TraceRow {
    fn from(r: &IterationRecord) -> Self {
        Self {
            k: r.k,
            alpha: r.alpha,
            theta: r.theta,
            f: r.f,
            v: r.v,
            merit: r.merit,
            step_norm: r.step_norm,
            lambda_inf: r.lambda_inf,
            kkt_stationarity: r.kkt.stationarity,
            kkt_comp: r.kkt.complementarity,
            x: r.x.clone(),
        }
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(n: usize) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|j| format!("x_{j}")))
        .collect()
}

pub fn write_trace<W: Write>(rows: &[TraceRow], n: usize, out: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(n))?;
    for r in rows {
        let mut fields = vec![r.k.to_string()];
        fields.extend(
            [
                r.alpha,
                r.theta,
                r.f,
                r.v,
                r.merit,
                r.step_norm,
                r.lambda_inf,
                r.kkt_stationarity,
                r.kkt_comp,
            ]
            .iter()
            .chain(r.x.iter())
            .map(|&v| format_float(v)),
        );
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records<W: Write>(records: &[IterationRecord], n: usize, out: W) -> Result<(), TraceError> {
    let rows: Vec<TraceRow> = records.iter().map(TraceRow::from).collect();
    write_trace(&rows, n, out)
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut rd = csv::Reader::from_reader(input);
    let head = rd.headers()?.clone();
    let n = head.len().saturating_sub(FIXED_COLUMNS.len());
    if head.len() < FIXED_COLUMNS.len() || head.iter().collect::<Vec<_>>() != header(n) {
        return Err(TraceError::Header(head.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| TraceError::Row { row: i + 1, message };
        let num = |j: usize| -> Result<f64, TraceError> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", &head[j])))
        };
        let k = rec[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| bad(format!("column k: {e}")))?;
        rows.push(TraceRow {
            k,
            alpha: num(1)?,
            theta: num(2)?,
            f: num(3)?,
            v: num(4)?,
            merit: num(5)?,
            step_norm: num(6)?,
            lambda_inf: num(7)?,
            kkt_stationarity: num(8)?,
            kkt_comp: num(9)?,
            x: DVector::from_iterator(n, (0..n).map(|j| num(10 + j)).collect::<Result<Vec<_>, _>>()?),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, x: &[f64]) -> TraceRow {
        TraceRow {
            k,
            alpha: 0.5,
            theta: 1.0 / 3.0,
            f: -0.1,
            v: 0.0,
            merit: 1e-300,
            step_norm: std::f64::consts::PI,
            lambda_inf: 2.0,
            kkt_stationarity: 1e-9,
            kkt_comp: 0.0,
            x: DVector::from_column_slice(x),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![row(0, &[0.1, -0.7]), row(1, &[1.0 / 7.0, 2e-17])];
        let mut buf = Vec::new();
        write_trace(&rows, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,alpha,theta,f,v,merit,step_norm,lambda_inf,kkt_stationarity,kkt_comp,x_0,x_1\n"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn rejects_foreign_header() {
        let err = read_trace("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Header(_)));
    }

    #[test]
    fn reports_bad_number() {
        let mut buf = Vec::new();
        write_trace(&[row(0, &[0.0])], 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("5.0000000000000000e-1", "oops");
        let err = read_trace(text.as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Row { row: 1, .. }), "{err}");
    }
}
