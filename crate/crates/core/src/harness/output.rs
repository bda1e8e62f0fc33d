use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::config::{ExperimentConfig, OutputFormat};
use crate::error::Result;

/// One table entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Twelve significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[idx]).collect())
    }

    fn records_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.clone(), serde_json::to_value(v).unwrap_or(Value::Null)))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// Tabular result plus scalar summary. `timing` entries are reported in JSON
/// only, so CSV output is reproducible byte for byte.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub table: Table,
    pub summary: BTreeMap<String, Value>,
    pub timing: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(table: Table) -> Self {
        Self { table, ..Default::default() }
    }

    pub fn with<V: Serialize>(mut self, key: &str, value: V) -> Self {
        self.summary.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }
}

pub fn render_csv(cfg: &ExperimentConfig, report: &Report) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# fockres {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "# config {}", serde_json::to_string(cfg)?);
    for (k, v) in &report.summary {
        let _ = writeln!(out, "# {k} = {}", summary_text(v));
    }
    let _ = writeln!(out, "{}", report.table.columns.join(","));
    for row in &report.table.rows {
        let line: Vec<String> = row.iter().map(Cell::csv).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    Ok(out)
}

fn summary_text(v: &Value) -> String {
    match v {
        Value::Number(n) => n.as_f64().map(format_float).unwrap_or_else(|| n.to_string()),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn render_json(cfg: &ExperimentConfig, report: &Report) -> Result<String> {
    let mut summary: serde_json::Map<String, Value> =
        report.summary.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    for (k, v) in &report.timing {
        summary.insert(k.clone(), serde_json::to_value(v)?);
    }
    let doc = serde_json::json!({
        "config": cfg,
        "records": report.table.records_json(),
        "summary": Value::Object(summary),
    });
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn render(cfg: &ExperimentConfig, report: &Report) -> Result<String> {
    match cfg.format {
        OutputFormat::Csv => render_csv(cfg, report),
        OutputFormat::Json => render_json(cfg, report),
    }
}

/// Writes to `cfg.output`, or to `sink` when no path is configured.
pub fn emit(cfg: &ExperimentConfig, report: &Report, sink: &mut dyn Write) -> Result<()> {
    let text = render(cfg, report)?;
    match &cfg.output {
        Some(path) => write_file(path, &text),
        None => Ok(sink.write_all(text.as_bytes())?),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    Ok(std::fs::write(path, text)?)
}
