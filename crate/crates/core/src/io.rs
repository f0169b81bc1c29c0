//! CSV and JSON persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub values: Array2<f64>,
}

pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers().map_err(|e| Error::Csv { line: 1, message: e.to_string() })?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Csv { line: 1, message: "missing header".into() });
    }
    let width = names.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Csv { line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Csv { line, message: format!("expected {width} fields, found {}", rec.len()) });
        }
        for (field, name) in rec.iter().zip(&names) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Csv { line, message: format!("non-numeric value '{field}' in column '{name}'") })?;
            if !v.is_finite() {
                return Err(Error::Csv { line, message: format!("non-finite value in column '{name}'") });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Csv { line: 1, message: "no data rows".into() });
    }
    let values = Array2::from_shape_vec((rows, width), data).expect("rows have equal width");
    Ok(Table { names, values })
}

impl Table {
    /// Splits off `response` as `y`; the other columns form the design.
    pub fn into_dataset(self, response: &str) -> Result<Dataset> {
        let r = self
            .names
            .iter()
            .position(|n| n == response)
            .ok_or_else(|| Error::invalid(format!("response column '{response}' not found")))?;
        let keep: Vec<usize> = (0..self.names.len()).filter(|&j| j != r).collect();
        if keep.is_empty() {
            return Err(Error::invalid("no covariate columns besides the response"));
        }
        let x = self.values.select(ndarray::Axis(1), &keep);
        let y: Array1<f64> = self.values.column(r).to_owned();
        let names = keep.iter().map(|&j| self.names[j].clone()).collect();
        Dataset::new(x, y, names)
    }
}

pub fn read_csv(path: impl AsRef<Path>, response: &str) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    read_table(BufReader::new(file))?.into_dataset(response)
}

/// Writes the covariates followed by the response column. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_dataset<W: Write>(d: &Dataset, response: &str, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = d.names().iter().map(String::as_str).collect();
    header.push(response);
    out.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for i in 0..d.n() {
        let mut rec: Vec<String> = d.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(d.y()[i].to_string());
        out.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv(path: impl AsRef<Path>, d: &Dataset, response: &str) -> Result<()> {
    write_dataset(d, response, BufWriter::new(File::create(path.as_ref())?))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
