use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mortality_core::io::{write_table, Metadata};
use serde_json::{json, Map, Value};
use tempfile::NamedTempFile;

use crate::args::Format;
use crate::error::CliError;

/// A table cell; CSV prints it, JSON keeps numbers numeric.
#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Flag(bool),
    Empty,
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::Num(x) => x.to_string(),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Flag(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Num(x) => json!(x),
            Cell::Int(n) => json!(n),
            Cell::Text(s) => json!(s),
            Cell::Flag(b) => json!(b),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Flag(b)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// Output directory plus the configuration echoed into every file.
pub struct Sink {
    dir: PathBuf,
    metadata: Metadata,
    format: Format,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path, metadata: Metadata, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            metadata,
            format,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `name` through a temporary file renamed into place on success.
    pub fn file(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let target = self.dir.join(name);
        let tmp = NamedTempFile::new_in(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        {
            let mut out = BufWriter::new(tmp.as_file());
            body(&mut out)?;
            out.flush().map_err(|e| CliError::io(&target, e))?;
        }
        tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
        self.written.push(target);
        Ok(())
    }

    fn config_json(&self) -> Value {
        let map: Map<String, Value> = self
            .metadata
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        Value::Object(map)
    }

    /// JSON document `{"config": ..., "report": ...}`.
    pub fn json(&mut self, name: &str, report: Value) -> Result<(), CliError> {
        let doc = json!({ "config": self.config_json(), "report": report });
        self.file(name, |out| {
            serde_json::to_writer_pretty(&mut *out, &doc)?;
            writeln!(out).map_err(CliError::from)
        })
    }

    /// A report table as `stem.csv` or `stem.json` depending on `--format`.
    pub fn table(&mut self, stem: &str, header: &[&str], rows: Vec<Vec<Cell>>) -> Result<(), CliError> {
        match self.format {
            Format::Csv => {
                let metadata = self.metadata.clone();
                self.file(&format!("{stem}.csv"), |out| {
                    write_table(
                        out,
                        &metadata,
                        header,
                        rows.iter().map(|r| r.iter().map(Cell::to_csv).collect()),
                    )
                    .map_err(CliError::from)
                })
            }
            Format::Json => {
                let records: Vec<Value> = rows
                    .iter()
                    .map(|r| {
                        Value::Object(
                            header
                                .iter()
                                .zip(r)
                                .map(|(h, c)| (h.to_string(), c.to_json()))
                                .collect(),
                        )
                    })
                    .collect();
                self.json(&format!("{stem}.json"), Value::Array(records))
            }
        }
    }
}
