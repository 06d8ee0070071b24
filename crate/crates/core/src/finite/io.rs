//! CSV tables and JSON reports.
//!
//! Tables are always laid out with x-states as rows and z-states as
//! columns, preceded by a `# rows=<n_x> cols=<n_z>` line. A `p(x|z)` file
//! therefore has unit column sums and a `q(z|x)` file unit row sums.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{CompatReport, FiniteCond, FiniteError, JointMatrix};

fn csv_err(e: csv::Error) -> FiniteError {
    FiniteError::Csv(e.to_string())
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.trim().strip_prefix('#')?.trim();
    let mut rows = None;
    let mut cols = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("rows=") {
            rows = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("cols=") {
            cols = v.parse().ok();
        }
    }
    Some((rows?, cols?))
}

/// Reads a headed row-major table: `(rows, cols, entries)`.
pub fn read_table_csv<R: Read>(reader: R) -> Result<(usize, usize, Vec<f64>), FiniteError> {
    let mut buf = BufReader::new(reader);
    let mut first = String::new();
    buf.read_line(&mut first).map_err(|e| FiniteError::Io(e.to_string()))?;
    let (rows, cols) = parse_header(&first)
        .ok_or_else(|| FiniteError::Csv(format!("expected `# rows=<n> cols=<m>` header, found {first:?}")))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(buf);
    let mut data = Vec::with_capacity(rows * cols);
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != cols {
            return Err(FiniteError::Csv(format!("row {r} has {} fields, expected {cols}", rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| FiniteError::Csv(format!("row {r}: not a number: {field:?}")))?;
            data.push(v);
        }
    }
    if data.len() != rows * cols {
        return Err(FiniteError::Shape { rows, cols, got: data.len() });
    }
    Ok((rows, cols, data))
}

/// Writes a headed row-major table.
pub fn write_table_csv<W: Write>(writer: W, rows: usize, cols: usize, data: &[f64]) -> Result<(), FiniteError> {
    let mut writer = writer;
    writeln!(writer, "# rows={rows} cols={cols}").map_err(|e| FiniteError::Io(e.to_string()))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for r in data.chunks(cols) {
        w.write_record(r.iter().map(|v| format!("{v:?}"))).map_err(csv_err)?;
    }
    w.flush().map_err(|e| FiniteError::Io(e.to_string()))
}

/// Reads `p(x|z)` from an x-by-z table with unit column sums.
pub fn read_p_csv<R: Read>(reader: R) -> Result<FiniteCond, FiniteError> {
    let (rows, cols, data) = read_table_csv(reader)?;
    FiniteCond::new(rows, cols, data)
}

/// Reads `q(z|x)` from an x-by-z table with unit row sums.
pub fn read_q_csv<R: Read>(reader: R) -> Result<FiniteCond, FiniteError> {
    let (rows, cols, data) = read_table_csv(reader)?;
    let mut t = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = data[i * cols + j];
        }
    }
    FiniteCond::new(cols, rows, t)
}

pub fn write_p_csv<W: Write>(writer: W, p: &FiniteCond) -> Result<(), FiniteError> {
    write_table_csv(writer, p.n_out(), p.n_given(), p.entries())
}

pub fn write_q_csv<W: Write>(writer: W, q: &FiniteCond) -> Result<(), FiniteError> {
    write_table_csv(writer, q.n_given(), q.n_out(), &q.transposed_entries())
}

pub fn write_joint_csv<W: Write>(writer: W, j: &JointMatrix) -> Result<(), FiniteError> {
    write_table_csv(writer, j.n_x(), j.n_z(), &j.rows().concat())
}

/// Serializable form of a [`CompatReport`]; supports are lists of `0`/`1`
/// row strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub compatible: bool,
    pub globally_determinate: bool,
    pub complete_supports: Vec<Vec<String>>,
    pub joints: Vec<Vec<Vec<f64>>>,
}

impl From<&CompatReport> for ReportJson {
    fn from(r: &CompatReport) -> Self {
        Self {
            compatible: r.compatible,
            globally_determinate: r.globally_determinate,
            complete_supports: r.complete_supports.iter().map(|s| s.to_strings()).collect(),
            joints: r.joints.iter().map(JointMatrix::rows).collect(),
        }
    }
}
