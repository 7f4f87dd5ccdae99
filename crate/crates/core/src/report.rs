//! Result tables, summary statistics and file emission.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Text(v) => f.write_str(v),
        }
    }
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<u32> for Value {
    fn from(v: u32) -> Self {
        Value::Int(i64::from(v))
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Int(i64::from(v))
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

/// A named table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Also write a gnuplot data file, with one block per distinct value of
    /// this column.
    pub plot_by: Option<usize>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            plot_by: None,
        }
    }

    pub fn plotted_by(mut self, column: &str) -> Self {
        self.plot_by = self.column(column);
        self
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows whose `key` column renders as `value`.
    pub fn rows_where<'a>(&'a self, key: &str, value: &'a str) -> impl Iterator<Item = &'a Vec<Value>> + 'a {
        let idx = self.column(key);
        self.rows
            .iter()
            .filter(move |r| idx.is_some_and(|i| r[i].to_string() == value))
    }

    /// Numeric value of `column` in `row`.
    pub fn get(&self, row: &[Value], column: &str) -> Option<f64> {
        self.column(column).and_then(|i| row[i].as_f64())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub tables: Vec<Table>,
}

impl RunReport {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn extend(&mut self, other: RunReport) {
        self.tables.extend(other.tables);
    }
}

/// Sample mean with a two-sided 95% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn summarize(samples: &[f64]) -> Summary {
    let n = samples.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            std: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
        };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Summary {
            n,
            mean,
            std: 0.0,
            ci_low: mean,
            ci_high: mean,
        };
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(1.96);
    let half = t * std / (n as f64).sqrt();
    Summary {
        n,
        mean,
        std,
        ci_low: mean - half,
        ci_high: mean + half,
    }
}

fn write_csv(table: &Table, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated columns, `#` header, two blank lines between blocks
/// so that each block is addressable with gnuplot's `index`.
fn write_dat(table: &Table, key: usize, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {}", table.columns.join(" "))?;
    let mut current: Option<String> = None;
    for row in &table.rows {
        let k = row[key].to_string();
        if current.as_ref().is_some_and(|c| *c != k) {
            writeln!(w)?;
            writeln!(w)?;
        }
        if current.as_ref() != Some(&k) {
            writeln!(w, "# {} = {k}", table.columns[key])?;
            current = Some(k);
        }
        let fields: Vec<String> = row
            .iter()
            .map(|v| match v {
                Value::Text(s) if s.contains(char::is_whitespace) => format!("\"{s}\""),
                other => other.to_string(),
            })
            .collect();
        writeln!(w, "{}", fields.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every table as `<name>.csv`, plus `<name>.dat` for plotted tables.
pub fn emit_csv(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for table in &report.tables {
        if table.name.is_empty() || table.name.contains(['/', '\\']) {
            return Err(Error::invalid("table name", format!("{:?} is not a plain file stem", table.name)));
        }
        let csv_path = dir.join(format!("{}.csv", table.name));
        write_csv(table, &csv_path)?;
        written.push(csv_path);
        if let Some(key) = table.plot_by {
            let dat_path = dir.join(format!("{}.dat", table.name));
            write_dat(table, key, &dat_path)?;
            written.push(dat_path);
        }
    }
    Ok(written)
}
