//! CSV sample files and result tables.
//!
//! Sample files hold one error sample per row with no header. Result tables
//! start with a fixed header; floats use the shortest round-trip form.

use std::io::{Read, Write};

use drsmpc_core::drprs::SampleSet;
use drsmpc_core::linalg::Matrix;
use thiserror::Error;

use crate::sim::{ReliabilityRow, SimMetrics};

pub const RELIABILITY_HEADER: [&str; 6] = ["M", "theta", "r", "eta_q05", "eta_q50", "eta_q95"];
pub const SIMULATE_HEADER: [&str; 7] = ["eta", "runs", "steps", "avg_cost", "violations", "total_samples", "infeasible_runs"];
pub const REGION_HEADER: [&str; 3] = ["x1", "x2", "feasible"];
pub const DR_PRS_HEADER: [&str; 3] = ["row", "epsilon", "eta"];
pub const PRS_TRUE_HEADER: [&str; 4] = ["row", "variance", "p", "eta"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Model(#[from] drsmpc_core::Error),
}

/// Reads a headerless sample file with `nx` columns.
pub fn read_samples<R: Read>(reader: R, nx: usize) -> Result<SampleSet, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != nx {
            return Err(IoError::Parse {
                line,
                message: format!("expected {nx} columns, found {}", record.len()),
            });
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| IoError::Parse {
                line,
                message: format!("not a number: `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(IoError::Parse {
                    line,
                    message: "non-finite sample".into(),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok(SampleSet::new(Matrix::new(rows, nx, data)?)?)
}

pub fn write_samples<W: Write>(writer: W, samples: &SampleSet) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for j in 0..samples.len() {
        w.write_record(samples.sample(j).iter().map(f64::to_string))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn table<W: Write>(writer: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_reliability<W: Write>(writer: W, rows: &[ReliabilityRow]) -> Result<(), IoError> {
    table(
        writer,
        &RELIABILITY_HEADER,
        rows.iter().map(|r| {
            vec![
                r.m.to_string(),
                r.theta.to_string(),
                r.r.to_string(),
                r.eta_q05.to_string(),
                r.eta_q50.to_string(),
                r.eta_q95.to_string(),
            ]
        }),
    )
}

pub fn write_simulate<W: Write>(writer: W, rows: &[(f64, SimMetrics)]) -> Result<(), IoError> {
    table(
        writer,
        &SIMULATE_HEADER,
        rows.iter().map(|(eta, m)| {
            vec![
                eta.to_string(),
                m.runs.to_string(),
                m.steps.to_string(),
                m.avg_cost.to_string(),
                m.violation_count.to_string(),
                m.total_state_samples.to_string(),
                m.infeasible_at_start.to_string(),
            ]
        }),
    )
}

pub fn write_region<W: Write>(writer: W, points: &[(f64, f64, bool)]) -> Result<(), IoError> {
    table(
        writer,
        &REGION_HEADER,
        points
            .iter()
            .map(|(x1, x2, f)| vec![x1.to_string(), x2.to_string(), u8::from(*f).to_string()]),
    )
}

/// `(row, epsilon, eta)` with one-based rows.
pub fn write_dr_prs<W: Write>(writer: W, etas: &[f64], epsilons: &[f64]) -> Result<(), IoError> {
    table(
        writer,
        &DR_PRS_HEADER,
        etas.iter()
            .zip(epsilons)
            .enumerate()
            .map(|(i, (eta, eps))| vec![(i + 1).to_string(), eps.to_string(), eta.to_string()]),
    )
}

/// `(row, variance, p, eta)` with one-based rows.
pub fn write_prs_true<W: Write>(writer: W, rows: &[(f64, f64, f64)]) -> Result<(), IoError> {
    table(
        writer,
        &PRS_TRUE_HEADER,
        rows.iter().enumerate().map(|(i, (var, p, eta))| {
            vec![(i + 1).to_string(), var.to_string(), p.to_string(), eta.to_string()]
        }),
    )
}
