//! CSV and summary writers. Every real number is written as `{:.17e}`, which
//! round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use crate::error::CliError;

/// Version of the `summary.json` layout.
pub const SUMMARY_VERSION: u32 = 1;

pub fn sci(x: f64) -> String {
    format!("{x:.17e}")
}

pub struct Out {
    dir: PathBuf,
}

impl Out {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.path(name), text)?;
        Ok(())
    }

    pub fn csv(&self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write(name, &table.render())
    }
}

/// Rows of preformatted cells under a header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Dense matrix with a header row of column labels.
pub fn matrix_csv(labels: &[String], m: &DMatrix<f64>) -> String {
    let mut s = labels.join(",");
    s.push('\n');
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&x| sci(x)).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// A per-component vector: for meshes, `node,x,y,<name>`; otherwise `index,<name>`.
pub struct Indexed<'a> {
    pub ids: &'a [usize],
    pub coords: Option<&'a [[f64; 2]]>,
}

impl Indexed<'_> {
    pub fn table(&self, name: &str, values: &DVector<f64>) -> Table {
        self.columns(&[(name, values)])
    }

    pub fn columns(&self, cols: &[(&str, &DVector<f64>)]) -> Table {
        let names = cols.iter().map(|(n, _)| n.to_string());
        let mut t = match self.coords {
            Some(_) => Table::new(["node", "x", "y"].map(String::from).into_iter().chain(names)),
            None => Table::new(std::iter::once("index".to_string()).chain(names)),
        };
        for (k, &id) in self.ids.iter().enumerate() {
            let mut row = vec![id.to_string()];
            if let Some(xy) = self.coords {
                row.extend([sci(xy[id][0]), sci(xy[id][1])]);
            }
            row.extend(cols.iter().map(|(_, v)| sci(v[k])));
            t.push(row);
        }
        t
    }
}

/// Reads the first and last columns of a CSV written by [`Indexed::table`].
pub fn read_indexed(path: &Path) -> Result<(Vec<String>, DVector<f64>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::InputNotFound(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    lines.next().ok_or_else(|| CliError::Input(format!("{}: empty file", path.display())))?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || CliError::Input(format!("{}: malformed row {}", path.display(), i + 2));
        if cells.len() < 2 {
            return Err(bad());
        }
        ids.push(cells[0].to_string());
        values.push(cells[cells.len() - 1].parse::<f64>().map_err(|_| bad())?);
    }
    Ok((ids, DVector::from_vec(values)))
}

pub struct Summary {
    fields: Map<String, Value>,
}

impl Summary {
    pub fn new(command: &str) -> Self {
        let mut fields = Map::new();
        fields.insert("version".into(), json!(SUMMARY_VERSION));
        fields.insert("command".into(), json!(command));
        Self { fields }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.fields.insert(key.into(), value.into());
    }

    /// Final document: `status`, `error` (code or null) and `message` are
    /// always present.
    pub fn finish(mut self, outcome: Result<(), &CliError>) -> Value {
        match outcome {
            Ok(()) => {
                self.set("status", "ok");
                self.set("error", Value::Null);
                self.set("message", Value::Null);
            }
            Err(e) => {
                self.set("status", "error");
                self.set("error", e.code());
                self.set("message", e.to_string());
            }
        }
        Value::Object(self.fields)
    }
}

/// JSON has no infinities or NaN; those become null.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}
