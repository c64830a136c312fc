//! `ITNS` tensor encoding.
//!
//! Layout, little-endian: the four magic bytes `ITNS`, a `u8` rank, `rank`
//! dimensions as `u32`, then the values as raw `f32`.

use std::io::{Read, Write};

use super::{Result, Tensor, TensorError};

pub const ITNS_MAGIC: &[u8; 4] = b"ITNS";

/// Writes the magic, rank and dimensions; the caller streams the payload.
pub fn write_itns_header<W: Write>(w: &mut W, shape: &[usize]) -> Result<()> {
    let rank =
        u8::try_from(shape.len()).map_err(|_| TensorError::Format(format!("rank {} exceeds 255", shape.len())))?;
    w.write_all(ITNS_MAGIC)?;
    w.write_all(&[rank])?;
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| TensorError::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

/// Reads and validates a header, returning the shape.
pub fn read_itns_header<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ITNS_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 4];
        r.read_exact(&mut d)?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    Ok(shape)
}

pub fn write_itns<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    write_itns_header(w, t.shape())?;
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_itns<R: Read>(r: &mut R) -> Result<Tensor> {
    let shape = read_itns_header(r)?;
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Tensor::new(shape, data).map_err(|e| TensorError::Format(e.to_string()))
}

/// Encoded size in bytes of a tensor with the given shape.
pub fn itns_len(shape: &[usize]) -> usize {
    4 + 1 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}
