//! CSV plumbing shared by the file formats of every stage.
//!
//! All readers accept `#`-prefixed comment lines (artifacts written by the
//! pipeline carry a `# config_hash=...` provenance line) and locate columns by
//! header name, so column order in input files is free.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::calendar::YearMonth;
use crate::error::{MspiError, Result};

pub(crate) struct CsvInput {
    pub path: PathBuf,
    pub reader: csv::Reader<File>,
    pub columns: Vec<usize>,
}

pub(crate) fn open_csv(path: &Path, required: &[&str]) -> Result<CsvInput> {
    let file = File::open(path).map_err(|e| MspiError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .clone();
    let columns = required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| MspiError::MissingColumn {
                    path: path.to_path_buf(),
                    column: (*name).to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CsvInput {
        path: path.to_path_buf(),
        reader,
        columns,
    })
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> MspiError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => MspiError::io(path, source),
        other => MspiError::Malformed {
            path: path.to_path_buf(),
            line,
            column: String::from("*"),
            message: format!("{other:?}"),
        },
    }
}

/// Field accessor bound to a record's line number for error reporting.
pub(crate) struct Row<'a> {
    pub path: &'a Path,
    pub line: u64,
    pub record: &'a csv::StringRecord,
}

impl Row<'_> {
    fn malformed(&self, column: &str, message: String) -> MspiError {
        MspiError::Malformed {
            path: self.path.to_path_buf(),
            line: self.line,
            column: column.to_string(),
            message,
        }
    }

    pub fn str(&self, idx: usize) -> &str {
        self.record.get(idx).unwrap_or("")
    }

    pub fn date(&self, idx: usize, column: &str) -> Result<NaiveDate> {
        let s = self.str(idx);
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|_| self.malformed(column, format!("`{s}` is not an ISO-8601 date")))
    }

    pub fn month(&self, idx: usize, column: &str) -> Result<YearMonth> {
        self.str(idx)
            .parse()
            .map_err(|m: String| self.malformed(column, m))
    }

    /// Parses an optional number; empty, `NA`, `NaN` and `.` read as missing.
    pub fn opt_f64(&self, idx: usize, column: &str) -> Result<Option<f64>> {
        let s = self.str(idx);
        if is_missing(s) {
            return Ok(None);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| self.malformed(column, format!("`{s}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.malformed(column, format!("`{s}` is not finite")));
        }
        Ok(Some(v))
    }

    pub fn f64(&self, idx: usize, column: &str) -> Result<f64> {
        self.opt_f64(idx, column)?
            .ok_or_else(|| self.malformed(column, "missing value".into()))
    }

    pub fn flag(&self, idx: usize, column: &str) -> Result<bool> {
        match self.str(idx).to_ascii_lowercase().as_str() {
            "1" | "true" | "t" | "yes" | "y" => Ok(true),
            "0" | "false" | "f" | "no" | "n" => Ok(false),
            other => Err(self.malformed(column, format!("`{other}` is not a boolean flag"))),
        }
    }

    pub fn opt_bool01(&self, idx: usize, column: &str) -> Result<Option<bool>> {
        if is_missing(self.str(idx)) {
            Ok(None)
        } else {
            self.flag(idx, column).map(Some)
        }
    }
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") || s == "."
}

/// Iterates the records of an opened CSV, handing each to `f` with its line number.
pub(crate) fn for_each_row(
    input: &mut CsvInput,
    mut f: impl FnMut(&Row<'_>) -> Result<()>,
) -> Result<()> {
    let mut record = csv::StringRecord::new();
    loop {
        match input.reader.read_record(&mut record) {
            Ok(true) => {
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                f(&Row {
                    path: &input.path,
                    line,
                    record: &record,
                })?;
            }
            Ok(false) => return Ok(()),
            Err(e) => return Err(csv_error(&input.path, e)),
        }
    }
}

pub(crate) fn create_csv(
    path: &Path,
    comment: Option<&str>,
) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| MspiError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| MspiError::io(path, e))?;
    let mut out = BufWriter::new(file);
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(|e| MspiError::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(out))
}

pub(crate) fn finish_csv(path: &Path, writer: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = writer
        .into_inner()
        .map_err(|e| MspiError::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| MspiError::io(path, e))
}

pub(crate) fn write_err(path: &Path, e: csv::Error) -> MspiError {
    csv_error(path, e)
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn fmt_opt_bool(v: Option<bool>) -> String {
    v.map(|b| if b { "1" } else { "0" }.to_string())
        .unwrap_or_default()
}

/// Writes pretty JSON, creating the parent directory if needed.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| MspiError::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| MspiError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| MspiError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| MspiError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| MspiError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// SHA-256 of the compact JSON encoding, as lowercase hex.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
