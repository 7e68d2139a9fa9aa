//! Snapshot CSV format and number formatting.
//!
//! A snapshot file has a header row `x1,...,xN` and one state per row;
//! consecutive rows form snapshot pairs. Doubles are written with 17
//! significant digits so a write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Formats a double with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Writes an `N × L` trajectory (states as columns) as snapshot CSV.
pub fn write_snapshot_csv<W: Write>(out: W, trajectory: &DMatrix<f64>) -> Result<()> {
    let mut out = BufWriter::new(out);
    let header: Vec<String> = (1..=trajectory.nrows()).map(|i| format!("x{i}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for col in trajectory.column_iter() {
        let row: Vec<String> = col.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_snapshot_file(path: &Path, trajectory: &DMatrix<f64>) -> Result<()> {
    write_snapshot_csv(File::create(path)?, trajectory)
}

/// Reads snapshot CSV into an `N × L` matrix with one state per column.
///
/// Malformed rows fail with the offending line number. Non-finite values
/// such as `NaN` are kept so that callers can skip and count them.
pub fn read_snapshot_csv<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let n = headers.len();
    if n == 0 || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != n {
            return Err(Error::Parse {
                line,
                message: format!("expected {n} fields, found {}", record.len()),
            });
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_vec(n, rows, values))
}

pub fn read_snapshot_file(path: &Path) -> Result<DMatrix<f64>> {
    read_snapshot_csv(File::open(path)?)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}
