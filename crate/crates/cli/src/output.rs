//! Reports as comma-delimited text or line-delimited JSON.

use std::io::{self, Write};

use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Str(String),
    Int(u64),
    Float(f64),
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Str(s)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Str(s.to_string())
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Float(x) => format!("{x:.4}"),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Str(s) => Value::String(s.clone()),
            Cell::Int(n) => Value::Number((*n).into()),
            Cell::Float(x) => Number::from_f64(*x).map_or(Value::Null, Value::Number),
        }
    }
}

/// One named table of a report.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, columns: &[&str]) -> Self {
        Table { name, columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_columns(name: &'static str, columns: Vec<String>) -> Self {
        Table { name, columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

/// Text tables are separated by a blank line. JSON lines carry the table
/// name under `"table"`.
pub fn write_report<W: Write>(out: &mut W, tables: &[Table], format: Format) -> io::Result<()> {
    for (k, t) in tables.iter().enumerate() {
        match format {
            Format::Text => {
                if k > 0 {
                    writeln!(out)?;
                }
                writeln!(out, "{}", t.columns.join(","))?;
                for row in &t.rows {
                    let cells: Vec<String> = row.iter().map(Cell::text).collect();
                    writeln!(out, "{}", cells.join(","))?;
                }
            }
            Format::Json => {
                for row in &t.rows {
                    let mut obj = Map::new();
                    obj.insert("table".into(), Value::String(t.name.into()));
                    for (c, v) in t.columns.iter().zip(row) {
                        obj.insert(c.clone(), v.json());
                    }
                    writeln!(out, "{}", Value::Object(obj))?;
                }
            }
        }
    }
    Ok(())
}
