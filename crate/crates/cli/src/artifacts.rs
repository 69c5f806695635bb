//! Run directory with atomic artifact writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

/// Version of every JSON artifact layout written by this tool.
pub const SCHEMA_VERSION: u32 = 1;

pub struct RunDir {
    path: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(path: PathBuf) -> Result<RunDir, CliError> {
        std::fs::create_dir_all(&path)
            .map_err(|e| CliError::config(format!("cannot create run directory {}: {e}", path.display())))?;
        Ok(RunDir { path, written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn write_with<F>(&mut self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.path)?;
        {
            let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
            fill(&mut buf)?;
            buf.flush()?;
        }
        tmp.persist(self.file(name)).map_err(|e| CliError::from(e.error))?;
        log::info!("wrote {}", self.file(name).display());
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write_with(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    /// Pretty JSON with a top-level `schema_version` (keys sorted).
    pub fn write_json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), CliError> {
        let text = versioned_json(body)?;
        self.write_text(name, &text)
    }
}

pub fn versioned_json<T: Serialize>(body: &T) -> Result<String, CliError> {
    let mut map = serde_json::Map::new();
    map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    match serde_json::to_value(body)? {
        Value::Object(fields) => map.extend(fields),
        other => {
            map.insert("data".into(), other);
        }
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(map))?;
    text.push('\n');
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_is_versioned_and_rename_is_atomic() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(dir.path().join("r")).unwrap();
        run.write_json("a.json", &serde_json::json!({"x": 1})).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(run.file("a.json")).unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["x"], 1);
        run.write_json("b.json", &vec![1, 2]).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(run.file("b.json")).unwrap()).unwrap();
        assert_eq!(v["data"][1], 2);
        // no temporaries left behind
        let names: Vec<_> = std::fs::read_dir(run.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
        assert_eq!(run.written(), ["a.json", "b.json"]);
    }
}
