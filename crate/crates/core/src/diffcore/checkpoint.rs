//! Versioned binary parameter checkpoints.
//!
//! Layout (little-endian): magic `NQRC`, `u32` version, `u32` embedding
//! dimension, `u16`-prefixed vocabulary hash, `u32` tensor count, then per
//! tensor a `u16`-prefixed name, `u32` rows, `u32` cols and row-major f64s.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NQRC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dim: usize,
    pub vocab_hash: String,
    pub tensors: Vec<(String, Tensor2)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor2> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&CHECKPOINT_MAGIC)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        out.write_u32::<LittleEndian>(self.dim as u32)?;
        write_str(&mut out, &self.vocab_hash)?;
        out.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for (name, t) in &self.tensors {
            write_str(&mut out, name)?;
            out.write_u32::<LittleEndian>(t.rows() as u32)?;
            out.write_u32::<LittleEndian>(t.cols() as u32)?;
            for &v in t.data() {
                out.write_f64::<LittleEndian>(v)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let dim = input.read_u32::<LittleEndian>()? as usize;
        let vocab_hash = read_str(&mut input)?;
        let n = input.read_u32::<LittleEndian>()?;
        let mut tensors = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = read_str(&mut input)?;
            let rows = input.read_u32::<LittleEndian>()? as usize;
            let cols = input.read_u32::<LittleEndian>()? as usize;
            let mut data = vec![0.0; rows * cols];
            input.read_f64_into::<LittleEndian>(&mut data)?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint tensor `{name}`")));
            }
            tensors.push((name, Tensor2::from_vec(rows, cols, data)?));
        }
        Ok(Self {
            dim,
            vocab_hash,
            tensors,
        })
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

fn write_str<W: Write>(out: &mut W, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?;
    out.write_u16::<LittleEndian>(len)?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(input: &mut R) -> Result<String> {
    let len = input.read_u16::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}
