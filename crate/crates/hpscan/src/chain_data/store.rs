//! JSON-Lines dataset persistence.
//!
//! First line is a header object `{"format":"hpscan-raw","version":1}`,
//! then one [`ContractBundle`] per line. Wei amounts are decimal strings,
//! so the format is lossless for 256-bit values.

use super::ContractBundle;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_NAME: &str = "hpscan-raw";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing header line")]
    MissingHeader,
    #[error("unsupported format {format:?} version {version} (expected {FORMAT_NAME:?} version {FORMAT_VERSION})")]
    VersionMismatch { format: String, version: u32 },
    #[error("corrupt record at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// Write bundles to `path`, replacing any existing file.
pub fn store_dataset(path: &Path, bundles: &[ContractBundle]) -> Result<(), StoreError> {
    write_dataset(BufWriter::new(File::create(path)?), bundles)
}

/// Stream variant of [`store_dataset`] for pipes and stdout.
pub fn write_dataset<W: Write>(mut w: W, bundles: &[ContractBundle]) -> Result<(), StoreError> {
    let header = Header { format: FORMAT_NAME.into(), version: FORMAT_VERSION };
    serde_json::to_writer(&mut w, &header).map_err(io_from_json)?;
    w.write_all(b"\n")?;
    for bundle in bundles {
        serde_json::to_writer(&mut w, bundle).map_err(io_from_json)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Append bundles to an existing dataset after validating its header.
pub fn append_dataset(path: &Path, bundles: &[ContractBundle]) -> Result<(), StoreError> {
    {
        let mut first = String::new();
        BufReader::new(File::open(path)?).read_line(&mut first)?;
        check_header(&first)?;
    }
    let mut w = BufWriter::new(OpenOptions::new().append(true).open(path)?);
    for bundle in bundles {
        serde_json::to_writer(&mut w, bundle).map_err(io_from_json)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Load all bundles, reporting the 1-based line number of any corrupt record.
pub fn load_dataset(path: &Path) -> Result<Vec<ContractBundle>, StoreError> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Stream variant of [`load_dataset`] for pipes and stdin.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<ContractBundle>, StoreError> {
    let mut bundles = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if !saw_header {
            check_header(&line)?;
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bundle = serde_json::from_str(&line)
            .map_err(|e| StoreError::Corrupt { line: line_no, message: e.to_string() })?;
        bundles.push(bundle);
    }
    if !saw_header {
        return Err(StoreError::MissingHeader);
    }
    Ok(bundles)
}

fn check_header(line: &str) -> Result<(), StoreError> {
    if line.trim().is_empty() {
        return Err(StoreError::MissingHeader);
    }
    let header: Header = serde_json::from_str(line)
        .map_err(|e| StoreError::Corrupt { line: 1, message: e.to_string() })?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { format: header.format, version: header.version });
    }
    Ok(())
}

fn io_from_json(e: serde_json::Error) -> StoreError {
    StoreError::Io(std::io::Error::other(e))
}
