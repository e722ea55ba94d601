//! Field and mesh serialization.
//!
//! - mesh: JSON object `{"radius": R, "nr": Nr, "nth": Nth}`
//! - field CSV: header `index,value`, one row per entry, values printed with
//!   17 significant digits
//! - field binary: raw little-endian `f64`, row-major (cells `i*Nth + j`,
//!   then boundary nodes for coupled fields), no header

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::geometry::DiskMesh;

/// 17 significant digits, scientific notation. Round-trips every `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_mesh_json<W: Write>(mut w: W, mesh: &DiskMesh) -> Result<()> {
    serde_json::to_writer(&mut w, mesh)?;
    Ok(())
}

pub fn read_mesh_json<R: Read>(r: R) -> Result<DiskMesh> {
    Ok(serde_json::from_reader(r)?)
}

pub fn write_field_csv<W: Write>(mut w: W, values: &[f64]) -> Result<()> {
    writeln!(w, "index,value")?;
    for (k, v) in values.iter().enumerate() {
        writeln!(w, "{k},{}", format_f64(*v))?;
    }
    Ok(())
}

pub fn read_field_csv<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some("index,value") {
        return Err(Error::Format("missing `index,value` header".into()));
    }
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (idx, val) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("row {row}: expected two columns")))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("row {row}: bad index: {e}")))?;
        if idx != out.len() {
            return Err(Error::Format(format!("row {row}: index {idx} out of order")));
        }
        let val: f64 = val
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("row {row}: bad value: {e}")))?;
        out.push(val);
    }
    Ok(out)
}

pub fn write_field_binary<W: Write>(mut w: W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field_binary<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "binary field length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
