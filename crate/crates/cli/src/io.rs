//! Atomic file writes, content digests, and a strict reader for the
//! comma-separated tables this tool emits.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents` to a sibling temp file and renames it into place, so a
/// reader never sees a half-written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// A parsed CSV body whose header matched exactly.
#[derive(Debug)]
pub struct Table {
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str, header: &[&str], origin: &str) -> Result<Table, CliError> {
        let mut lines = text.lines();
        let got = lines.next().unwrap_or("");
        if got != header.join(",") {
            return Err(CliError::Data(format!(
                "{origin}: header `{got}` does not match `{}`",
                header.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<String> = line.split(',').map(String::from).collect();
            if fields.len() != header.len() {
                return Err(CliError::Data(format!(
                    "{origin} line {}: expected {} fields, found {}",
                    i + 2,
                    header.len(),
                    fields.len()
                )));
            }
            rows.push(fields);
        }
        Ok(Table { rows })
    }

    pub fn read(path: &Path, header: &[&str]) -> Result<Table, CliError> {
        Table::parse(&read_to_string(path)?, header, &path.display().to_string())
    }
}

/// Parses one field, naming the row and column on failure.
pub fn field<T: std::str::FromStr>(row: &[String], col: usize, what: &str) -> Result<T, CliError> {
    row[col].parse().map_err(|_| {
        CliError::Data(format!(
            "bad {what} `{}` in row {}",
            row[col],
            row.join(",")
        ))
    })
}
