//! Minimal NPY (v1.0) writer/reader for little-endian f64 arrays.
//!
//! Exported feature matrices and corrupted evaluation sets use this format so
//! any external tool (embedders, plotters) can load them directly.

use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Write a C-order f64 array with the given shape.
pub fn write_npy(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::invalid_argument(format!(
            "npy shape {:?} does not match {} elements",
            shape,
            data.len()
        )));
    }
    let shape_str = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_str}, }}"
    );
    // Pad so that magic + version + len + header is a multiple of 64.
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.push_str(&" ".repeat(pad));
    header.push('\n');

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&[1u8, 0u8])?;
    file.write_all(&(header.len() as u16).to_le_bytes())?;
    file.write_all(header.as_bytes())?;
    for v in data {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Read an f64 NPY file written by [`write_npy`] (v1.0, C-order, `<f8`).
pub fn read_npy(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = |message: String| Error::BadArtifact {
        path: path.display().to_string(),
        message,
    };
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 6];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not an NPY file".to_string()));
    }
    let mut version = [0u8; 2];
    file.read_exact(&mut version)?;
    let mut len_bytes = [0u8; 2];
    file.read_exact(&mut len_bytes)?;
    let header_len = u16::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    file.read_exact(&mut header)?;
    let header = String::from_utf8_lossy(&header).to_string();
    if !header.contains("'<f8'") {
        return Err(bad(format!("unsupported dtype in header: {header}")));
    }
    if header.contains("'fortran_order': True") {
        return Err(bad("fortran order not supported".to_string()));
    }
    let shape_part = header
        .split("'shape':")
        .nth(1)
        .and_then(|s| s.split('(').nth(1))
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad(format!("no shape in header: {header}")))?;
    let shape: Vec<usize> = shape_part
        .split(',')
        .filter_map(|tok| {
            let tok = tok.trim();
            if tok.is_empty() {
                None
            } else {
                Some(tok.parse::<usize>())
            }
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(format!("bad shape: {e}")))?;

    let n: usize = shape.iter().product();
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    if raw.len() != n * 8 {
        return Err(bad(format!("expected {} data bytes, found {}", n * 8, raw.len())));
    }
    let data = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((shape, data))
}
