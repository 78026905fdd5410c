//! Whole-file atomic writes and a minimal CSV builder.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use crate::error::{FsruError, Result};

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| FsruError::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| FsruError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| FsruError::io(&tmp, e))?;
    f.sync_all().map_err(|e| FsruError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| FsruError::io(path, e))
}

/// Comma-separated rows with a fixed header. Fields are written with
/// `Display`; none of the emitted values contain commas.
#[derive(Clone, Debug)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[&dyn Display]) {
        assert_eq!(fields.len(), self.columns, "csv row width");
        let line: Vec<String> = fields.iter().map(|f| f.to_string()).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn rows(&self) -> usize {
        self.text.lines().count() - 1
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }
}
