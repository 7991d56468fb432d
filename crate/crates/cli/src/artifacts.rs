//! Artifact writers. JSON files carry a `provenance` object next to the
//! payload; CSV files start with a `#` comment line holding the same fields.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dmdc_core::Result;
use serde::Serialize;

use crate::config::Provenance;

pub struct ArtifactDir {
    pub dir: PathBuf,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    provenance: &'a Provenance,
    data: &'a T,
}

impl ArtifactDir {
    pub fn create(dir: PathBuf, provenance: Provenance) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, provenance })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(&Stamped { provenance: &self.provenance, data })?;
        let path = self.path(name);
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }

    /// Writes a JSON object with `provenance` inserted as a top-level key.
    pub fn json_object(&self, name: &str, mut value: serde_json::Value) -> Result<PathBuf> {
        if let Some(map) = value.as_object_mut() {
            map.insert("provenance".into(), serde_json::to_value(&self.provenance)?);
        }
        let path = self.path(name);
        std::fs::write(&path, serde_json::to_string_pretty(&value)? + "\n")?;
        Ok(path)
    }

    pub fn csv(&self, name: &str, table: &Table) -> Result<PathBuf> {
        let mut text = format!(
            "# tool_version={} config_hash={} seed={}\n",
            self.provenance.tool_version, self.provenance.config_hash, self.provenance.seed
        );
        text += &table.render();
        let path = self.path(name);
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// Plain CSV table; numbers are written in shortest round-trip form.
pub struct Table {
    header: Vec<String>,
    body: String,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|h| h.as_ref().to_string()).collect(), body: String::new() }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.header.len());
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.body.push(',');
            }
            match c {
                Cell::Text(s) => self.body.push_str(&quote(s)),
                Cell::Num(v) => {
                    let _ = write!(self.body, "{v}");
                }
                Cell::Int(v) => {
                    let _ = write!(self.body, "{v}");
                }
            }
        }
        self.body.push('\n');
    }

    fn render(&self) -> String {
        let head: Vec<String> = self.header.iter().map(|h| quote(h)).collect();
        head.join(",") + "\n" + &self.body
    }
}

pub enum Cell {
    Text(String),
    Num(f64),
    Int(usize),
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn read_payload(path: &Path) -> Result<serde_json::Value> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(v.get("data").cloned().unwrap_or(v))
}
