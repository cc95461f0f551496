//! CSV and checksum helpers shared by all emitters.
//!
//! Dialect: comma separated, one header row, LF line endings, floats in the
//! shortest decimal form that round-trips a 64-bit value.

use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = BufWriter::new(File::create(path)?);
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

pub fn write_matrix(path: &Path, header: &[String], m: ArrayView2<f64>) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "header has {} columns, matrix has {}",
            header.len(),
            m.ncols()
        )));
    }
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV with a header row. Returns the header and the matrix.
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Format(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                rows + 1,
                rec.len(),
                header.len()
            )));
        }
        for field in rec.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| {
                Error::Format(format!("{}: bad number {field:?}: {e}", path.display()))
            })?);
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, header.len()), data)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((header, m))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(sha256_hex(&buf))
}

/// Short stable hash of any serializable config.
pub fn config_hash<T: serde::Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    sha256_hex(&json)[..16].to_owned()
}
