use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use bon_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Settings;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes `rows` as CSV with a header taken from the row type's fields.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            what: "csv",
            detail: format!("{other:?}"),
        },
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

pub fn write_snapshot(dir: &Path, name: &str, settings: &Settings) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, settings.render())?;
    Ok(path)
}

/// JSON metadata written next to a command's reports. Keys are sorted and
/// nothing time-dependent is recorded, so reruns produce identical files.
pub struct Sidecar {
    fields: BTreeMap<String, serde_json::Value>,
}

impl Sidecar {
    pub fn new(command: &str, settings: &Settings) -> Result<Self> {
        let mut fields = BTreeMap::new();
        fields.insert("command".into(), command.into());
        fields.insert("seed".into(), settings.seed()?.into());
        fields.insert(
            "config".into(),
            serde_json::to_value(settings.to_map()).expect("string maps serialize"),
        );
        Ok(Sidecar { fields })
    }

    pub fn insert(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.fields.insert(key.into(), value.into());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.fields).expect("JSON values serialize");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// The single `command key=value ...` line printed last on stdout.
pub struct Summary {
    line: String,
}

impl Summary {
    pub fn new(command: &str) -> Self {
        Summary {
            line: command.to_string(),
        }
    }

    pub fn field(mut self, key: &str, value: impl Display) -> Self {
        self.line.push_str(&format!(" {key}={value}"));
        self
    }

    pub fn float(self, key: &str, value: f64) -> Self {
        self.field(key, format!("{value:.6}"))
    }

    pub fn print(self) {
        println!("{}", self.line);
    }
}
