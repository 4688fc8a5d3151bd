//! Dense little-endian f32 matrix files shared by embedding and score tables.
//!
//! Layout: 4-byte magic, `u32` row count, `u32` column count, then
//! `rows * cols` f32 values in row-major order.

use std::io::{BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"NQRE";
pub const SCORE_MAGIC: [u8; 4] = *b"NQRS";

pub fn write_matrix<W: Write>(
    mut out: W,
    magic: [u8; 4],
    rows: usize,
    cols: usize,
    data: &[f64],
) -> Result<()> {
    debug_assert_eq!(rows * cols, data.len());
    out.write_all(&magic)?;
    out.write_u32::<LittleEndian>(rows as u32)?;
    out.write_u32::<LittleEndian>(cols as u32)?;
    for &v in data {
        out.write_f32::<LittleEndian>(v as f32)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a matrix, rejecting non-finite cells. The error names the row and
/// column of the first bad cell.
pub fn read_matrix<R: Read>(input: R, magic: [u8; 4]) -> Result<(usize, usize, Vec<f64>)> {
    let (rows, cols, data) = read_matrix_unchecked(input, magic)?;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("row {}, column {}", i / cols, i % cols)));
    }
    Ok((rows, cols, data))
}

pub fn read_matrix_unchecked<R: Read>(
    mut input: R,
    magic: [u8; 4],
) -> Result<(usize, usize, Vec<f64>)> {
    let mut got = [0u8; 4];
    input.read_exact(&mut got)?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(&magic)
        )));
    }
    let rows = input.read_u32::<LittleEndian>()? as usize;
    let cols = input.read_u32::<LittleEndian>()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = input.read_f32::<LittleEndian>().map_err(|e| {
                Error::Format(format!("truncated matrix at row {r}, column {c}: {e}"))
            })?;
            data.push(v as f64);
        }
    }
    Ok((rows, cols, data))
}

pub fn write_tsv<W: Write>(mut out: W, cols: usize, data: &[f64]) -> Result<()> {
    if cols == 0 {
        return Ok(());
    }
    for row in data.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
        writeln!(out, "{}", line.join("\t"))?;
    }
    Ok(())
}

/// Reads a tab-separated matrix; every row must have the same width.
pub fn read_tsv<R: BufRead>(input: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {c} columns, found {}", fields.len()),
                })
            }
            _ => {}
        }
        for (c, f) in fields.iter().enumerate() {
            let v: f32 = f.trim().parse().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("column {c}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("row {rows}, column {c}")));
            }
            data.push(v as f64);
        }
        rows += 1;
    }
    Ok((rows, cols.unwrap_or(0), data))
}
