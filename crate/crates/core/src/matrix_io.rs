//! Matrix exchange format shared by weights, readouts and state histories.
//!
//! JSON: `{"rows": R, "cols": C, "data": [row-major values]}`.
//! CSV: a `rows,cols` header, one line with the shape, then `R` lines of `C`
//! comma-separated values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, thiserror::Error)]
pub enum MatrixIoError {
    #[error("matrix shape {rows}x{cols} does not match {len} values")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("malformed matrix csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixRecord {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<MatrixRecord> for DMatrix<f64> {
    type Error = MatrixIoError;

    fn try_from(r: MatrixRecord) -> Result<Self, Self::Error> {
        if r.rows * r.cols != r.data.len() {
            return Err(MatrixIoError::Shape {
                rows: r.rows,
                cols: r.cols,
                len: r.data.len(),
            });
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

pub fn write_csv(m: &DMatrix<f64>, out: impl Write) -> Result<(), MatrixIoError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let err = |e: csv::Error| MatrixIoError::Csv(e.to_string());
    w.write_record(["rows", "cols"]).map_err(err)?;
    w.write_record([m.nrows().to_string(), m.ncols().to_string()])
        .map_err(err)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl Read) -> Result<DMatrix<f64>, MatrixIoError> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(input);
    let mut records = r.records();
    let bad = |msg: &str| MatrixIoError::Csv(msg.to_string());
    let shape = records
        .next()
        .ok_or_else(|| bad("missing shape line"))?
        .map_err(|e| MatrixIoError::Csv(e.to_string()))?;
    let parse_dim = |s: Option<&str>| -> Result<usize, MatrixIoError> {
        s.and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("shape line must hold two integers"))
    };
    let rows = parse_dim(shape.get(0))?;
    let cols = parse_dim(shape.get(1))?;
    let mut data = Vec::with_capacity(rows * cols);
    for record in records {
        let record = record.map_err(|e| MatrixIoError::Csv(e.to_string()))?;
        if record.len() != cols {
            return Err(bad("row length does not match the column count"));
        }
        for field in record.iter() {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| MatrixIoError::Csv(format!("{field:?}: {e}")))?,
            );
        }
    }
    MatrixRecord { rows, cols, data }.try_into()
}
