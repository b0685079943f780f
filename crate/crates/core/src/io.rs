//! Matrix ingestion and emission: CSV (one observation per line) and the
//! compact binary format for large dimensions.
//!
//! Binary layout: magic `DAK1`, then two little-endian u64 counts (N, d),
//! then N*d little-endian IEEE-754 doubles in row-major order.

use crate::error::{DakError, Result};
use crate::sample::SampleMatrix;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

pub const BINARY_MAGIC: &[u8; 4] = b"DAK1";

/// Parse a CSV matrix: comma-separated reals, one row per line. Blank lines
/// are skipped; ragged rows and non-numeric cells are rejected.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<SampleMatrix> {
    let reader = BufReader::new(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in trimmed.split(',') {
            let cell = cell.trim();
            let value: f64 = cell.parse().map_err(|_| {
                DakError::InvalidInput(format!(
                    "non-numeric cell '{cell}' at line {}",
                    lineno + 1
                ))
            })?;
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(DakError::InvalidInput(format!(
                    "ragged input: line {} has {} cells, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    SampleMatrix::from_rows(&rows)
}

pub fn write_matrix_csv<W: Write>(mut writer: W, sample: &SampleMatrix) -> Result<()> {
    for i in 1..=sample.n_obs() {
        let row = sample.row(i);
        let mut first = true;
        for v in row {
            if !first {
                write!(writer, ",")?;
            }
            write!(writer, "{v}")?;
            first = false;
        }
        writeln!(writer)?;
    }
    Ok(())
}

pub fn read_matrix_binary<R: Read>(mut reader: R) -> Result<SampleMatrix> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(DakError::InvalidInput("missing DAK1 magic in binary input".into()));
    }
    let mut counts = [0u8; 16];
    reader.read_exact(&mut counts)?;
    let n_obs = u64::from_le_bytes(counts[..8].try_into().unwrap()) as usize;
    let n_dims = u64::from_le_bytes(counts[8..].try_into().unwrap()) as usize;
    let total = n_obs
        .checked_mul(n_dims)
        .ok_or_else(|| DakError::InvalidInput("matrix dimensions overflow".into()))?;

    let mut bytes = vec![0u8; total * 8];
    reader.read_exact(&mut bytes)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SampleMatrix::new(n_obs, n_dims, values)
}

pub fn write_matrix_binary<W: Write>(mut writer: W, sample: &SampleMatrix) -> Result<()> {
    writer.write_all(BINARY_MAGIC)?;
    writer.write_all(&(sample.n_obs() as u64).to_le_bytes())?;
    writer.write_all(&(sample.n_dims() as u64).to_le_bytes())?;
    for v in sample.values() {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read a matrix from a file, sniffing the binary magic and falling back to
/// CSV.
pub fn read_matrix_file(path: &Path) -> Result<SampleMatrix> {
    let bytes = std::fs::read(path)?;
    read_matrix_bytes(&bytes)
}

/// Read a matrix from an in-memory buffer, sniffing the binary magic.
pub fn read_matrix_bytes(bytes: &[u8]) -> Result<SampleMatrix> {
    if bytes.len() >= 4 && &bytes[..4] == BINARY_MAGIC {
        read_matrix_binary(bytes)
    } else {
        read_matrix_csv(bytes)
    }
}
