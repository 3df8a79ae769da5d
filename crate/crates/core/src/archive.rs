//! "SPF1" feature archive: magic, u32 T, u32 D, then T*D little-endian
//! float32 values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPF1";

pub fn write_matrix<P: AsRef<Path>>(path: P, m: &Array2<f64>) -> Result<()> {
    let (t, d) = m.dim();
    let mut out = Vec::with_capacity(12 + t * d * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix<P: AsRef<Path>>(path: P) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(Error::MalformedHeader("not an SPF1 archive".into()));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + t * d * 4 {
        return Err(Error::MalformedHeader(format!(
            "SPF1 payload is {} bytes, expected {}",
            bytes.len() - 12,
            t * d * 4
        )));
    }
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((t, d), values)
        .map_err(|e| Error::MalformedHeader(e.to_string()))
}

/// Writes a column vector as an SPF1 archive with D = 1.
pub fn write_vector<P: AsRef<Path>>(path: P, v: &[f64]) -> Result<()> {
    let m = Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap();
    write_matrix(path, &m)
}

pub fn read_vector<P: AsRef<Path>>(path: P) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "expected D = 1 archive, got D = {}",
            m.ncols()
        )));
    }
    Ok(m.column(0).to_vec())
}

/// CSV debug emitter: header row then one row per record.
pub fn write_csv<P: AsRef<Path>>(
    path: P,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}
