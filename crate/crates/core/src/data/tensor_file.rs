//! Tensor file: magic `TSR1`, rank u32, dims u32 each, then raw
//! little-endian f32 data in row-major order.

use std::fs::{self, File};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"TSR1";
pub const MAX_RANK: usize = 8;

pub fn encode_tensor(tensor: &Tensor) -> Result<Vec<u8>> {
    let rank = tensor.rank();
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::dim(
            "write_tensor_file",
            format!("rank {rank} outside 1..={MAX_RANK}"),
        ));
    }
    let mut buf = Vec::with_capacity(8 + 4 * rank + 4 * tensor.len());
    buf.extend_from_slice(&TENSOR_MAGIC);
    buf.extend_from_slice(&(rank as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

fn length_error(origin: &Path, dims: &[usize], payload: usize) -> Error {
    let expected: usize = dims.iter().product();
    Error::format(
        origin,
        format!("length mismatch: header {dims:?} claims {expected} elements, file holds {payload} bytes of data"),
    )
}

/// Parse magic, rank and dims; returns the dims and the payload offset.
fn decode_header(bytes: &[u8], origin: &Path) -> Result<(Vec<usize>, usize)> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::format(origin, format!("truncated header at byte {at}")))
    };
    if bytes.get(..4) != Some(&TENSOR_MAGIC[..]) {
        return Err(Error::format(origin, "bad magic, expected TSR1"));
    }
    let rank = word(4)? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format(
            origin,
            format!("rank {rank} outside 1..={MAX_RANK}"),
        ));
    }
    let dims = (0..rank)
        .map(|i| word(8 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) {
        return Err(Error::format(
            origin,
            format!("zero-sized axis in {dims:?}"),
        ));
    }
    Ok((dims, 8 + 4 * rank))
}

pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let (dims, offset) = decode_header(bytes, origin)?;
    let expected: usize = dims.iter().product();
    let payload = &bytes[offset..];
    if payload.len() != expected * 4 {
        return Err(length_error(origin, &dims, payload.len()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(dims, data)
}

pub fn write_tensor_file(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(tensor)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read only the header and check the file length against it.
pub fn read_tensor_shape(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let total = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
    let mut head = vec![0u8; 8 + 4 * MAX_RANK];
    let mut filled = 0;
    while filled < head.len() {
        match file
            .read(&mut head[filled..])
            .map_err(|e| Error::io(path, e))?
        {
            0 => break,
            n => filled += n,
        }
    }
    head.truncate(filled);
    let (dims, offset) = decode_header(&head, path)?;
    let expected: usize = dims.iter().product();
    if total - offset != expected * 4 {
        return Err(length_error(path, &dims, total - offset));
    }
    Ok(dims)
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}
