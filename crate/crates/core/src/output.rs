//! Tabular outputs written as CSV or JSON.
//!
//! Numbers use Rust's shortest round-trip formatting, so a table read back
//! from its CSV yields bit-identical values. Absent values are an empty CSV
//! field and a JSON `null`.

use crate::time::{format_timestamp, parse_timestamp};
use chrono::NaiveDateTime;
use serde_json::{Map, Value};
use std::io;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(i64),
    Null,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn time(ts: &NaiveDateTime) -> Self {
        Cell::Text(format_timestamp(ts))
    }

    /// `None` and non-finite values both become [`Cell::Null`].
    pub fn opt_num(v: Option<f64>) -> Self {
        match v {
            Some(x) if x.is_finite() => Cell::Num(x),
            _ => Cell::Null,
        }
    }

    fn csv_field(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(x) => x.to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Null => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Int(i) => Value::from(*i),
            Cell::Null => Value::Null,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?}, expected csv or json")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("expected header {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
    lines: Vec<u64>,
}

impl Table {
    pub fn new<I, S>(header: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            lines: Vec::new(),
        }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.lines.push(self.rows.len() as u64 + 2);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv_field))
                .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Array of objects keyed by column name, one object per row.
    pub fn to_json_value(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let mut obj = Map::new();
                    for (k, c) in self.header.iter().zip(row) {
                        obj.insert(k.clone(), c.json());
                    }
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn to_bytes(&self, format: Format) -> Vec<u8> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => {
                let mut out = serde_json::to_vec_pretty(&self.to_json_value()).expect("json");
                out.push(b'\n');
                out
            }
        }
    }

    /// Writes `dir/stem.{csv,json}` and returns the path written.
    pub fn write(&self, dir: &Path, stem: &str, format: Format) -> io::Result<std::path::PathBuf> {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        std::fs::write(&path, self.to_bytes(format))?;
        Ok(path)
    }

    /// Reads a CSV whose header must equal `expected`. Cells are kept as text;
    /// use the typed accessors on [`RowView`].
    pub fn read_csv(source: &[u8], expected: &[&str]) -> Result<Table, TableError> {
        let table = Self::read_csv_any(source)?;
        if table.header != expected {
            return Err(TableError::Header {
                expected: expected.join(","),
                found: table.header.join(","),
            });
        }
        Ok(table)
    }

    /// Reads a CSV taking its header from the first line.
    pub fn read_csv_any(source: &[u8]) -> Result<Table, TableError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut table = Table::new(header);
        let width = table.header.len();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != width {
                return Err(TableError::Row {
                    line,
                    reason: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            table
                .rows
                .push(rec.iter().map(|f| Cell::Text(f.to_string())).collect());
            table.lines.push(line);
        }
        Ok(table)
    }

    pub fn rows(&self) -> impl Iterator<Item = RowView<'_>> {
        self.rows
            .iter()
            .zip(&self.lines)
            .map(|(cells, &line)| RowView { cells, line })
    }
}

pub struct RowView<'a> {
    cells: &'a [Cell],
    line: u64,
}

impl RowView<'_> {
    fn err(&self, reason: String) -> TableError {
        TableError::Row {
            line: self.line,
            reason,
        }
    }

    pub fn text(&self, i: usize) -> Result<&str, TableError> {
        match &self.cells[i] {
            Cell::Text(s) => Ok(s),
            other => Err(self.err(format!("column {i}: expected text, found {other:?}"))),
        }
    }

    pub fn num(&self, i: usize) -> Result<f64, TableError> {
        self.opt_num(i)?
            .ok_or_else(|| self.err(format!("column {i}: value required")))
    }

    pub fn opt_num(&self, i: usize) -> Result<Option<f64>, TableError> {
        match &self.cells[i] {
            Cell::Num(x) => Ok(Some(*x)),
            Cell::Int(v) => Ok(Some(*v as f64)),
            Cell::Null => Ok(None),
            Cell::Text(s) if s.is_empty() => Ok(None),
            Cell::Text(s) => s
                .parse()
                .map(Some)
                .map_err(|_| self.err(format!("column {i}: {s:?} is not a number"))),
        }
    }

    pub fn int(&self, i: usize) -> Result<i64, TableError> {
        match &self.cells[i] {
            Cell::Int(v) => Ok(*v),
            Cell::Text(s) => s
                .parse()
                .map_err(|_| self.err(format!("column {i}: {s:?} is not an integer"))),
            other => Err(self.err(format!("column {i}: expected integer, found {other:?}"))),
        }
    }

    pub fn timestamp(&self, i: usize) -> Result<NaiveDateTime, TableError> {
        let s = self.text(i)?;
        parse_timestamp(s).ok_or_else(|| self.err(format!("column {i}: bad timestamp {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_agree_on_nulls() {
        let mut t = Table::new(["k", "v"]);
        t.push(vec![Cell::text("a"), Cell::opt_num(None)]);
        t.push(vec![Cell::text("b"), Cell::Num(0.1)]);
        t.push(vec![Cell::text("c"), Cell::opt_num(Some(f64::NAN))]);
        assert_eq!(String::from_utf8(t.to_csv()).unwrap(), "k,v\na,\nb,0.1\nc,\n");
        let json = serde_json::to_string(&t.to_json_value()).unwrap();
        assert_eq!(
            json,
            r#"[{"k":"a","v":null},{"k":"b","v":0.1},{"k":"c","v":null}]"#
        );
    }

    #[test]
    fn read_back_is_bit_exact() {
        let values = [0.1 + 0.2, 1.0 / 3.0, 1e-300, 72.4];
        let mut t = Table::new(["v"]);
        for v in values {
            t.push(vec![Cell::Num(v)]);
        }
        let back = Table::read_csv(&t.to_csv(), &["v"]).unwrap();
        let got: Vec<f64> = back.rows().map(|r| r.num(0).unwrap()).collect();
        assert_eq!(got, values);
        assert!(Table::read_csv(&t.to_csv(), &["w"]).is_err());
    }
}
