//! Binary model file.
//!
//! Layout, all integers and reals little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `RNLM`                           |
//! | 4      | 4    | format version (u32, currently 1)      |
//! | 8      | 4    | hidden size H (u32)                    |
//! | 12     | 4    | vocabulary size n (u32)                |
//! | 16     | 4    | direct-connection order (u32)          |
//! | 20     | 8    | direct-connection table size M (u64)   |
//! | 28     | 8    | feature hash seed (u64)                |
//! | 36     | ...  | input weights, n·H f32, row per word   |
//! |        |      | recurrent weights, H·H f32, row-major  |
//! |        |      | node vectors, (n−1)·H f32              |
//! |        |      | direct-connection table, M f32         |

use std::io::{Read, Write};

use super::RnnlmModel;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"RNLM";
pub const MODEL_VERSION: u32 = 1;

fn write_reals<W: Write>(out: &mut W, v: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 4);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_reals<R: Read>(input: &mut R, len: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; len * 4];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_model<W: Write>(model: &RnnlmModel, mut out: W) -> Result<()> {
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    out.write_all(&(model.hidden_size as u32).to_le_bytes())?;
    out.write_all(&(model.vocab_size as u32).to_le_bytes())?;
    out.write_all(&(model.maxent_order as u32).to_le_bytes())?;
    out.write_all(&(model.maxent.len() as u64).to_le_bytes())?;
    out.write_all(&model.hash_seed.to_le_bytes())?;
    write_reals(&mut out, &model.input_weights)?;
    write_reals(&mut out, &model.recurrent_weights)?;
    write_reals(&mut out, &model.node_vectors)?;
    write_reals(&mut out, &model.maxent)?;
    out.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<RnnlmModel> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let hidden_size = read_u32(&mut input)? as usize;
    let vocab_size = read_u32(&mut input)? as usize;
    let maxent_order = read_u32(&mut input)? as usize;
    let table = read_u64(&mut input)?;
    let hash_seed = read_u64(&mut input)?;
    if hidden_size == 0 || vocab_size < 2 {
        return Err(Error::Format("degenerate dimensions".into()));
    }
    if !table.is_power_of_two() || table > 1 << 32 {
        return Err(Error::Format(format!("table size {table} is not a power of two")));
    }
    let input_weights = read_reals(&mut input, vocab_size * hidden_size)?;
    let recurrent_weights = read_reals(&mut input, hidden_size * hidden_size)?;
    let node_vectors = read_reals(&mut input, (vocab_size - 1) * hidden_size)?;
    let maxent = read_reals(&mut input, table as usize)?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes".into()));
    }
    Ok(RnnlmModel {
        hidden_size,
        vocab_size,
        maxent_order,
        hash_seed,
        input_weights,
        recurrent_weights,
        node_vectors,
        maxent,
    })
}
