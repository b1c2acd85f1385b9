//! Weights file: magic `CDW1`, version u16, parameter count u32, then per
//! parameter the name length u32, UTF-8 name, rank u32, dims u32 each and
//! raw f32 data. All little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"CDW1";
pub const WEIGHTS_VERSION: u16 = 1;

const MAX_RANK: usize = 8;

pub fn write_weights<W: Write>(net: &Network<f32>, mut out: W) -> std::io::Result<()> {
    out.write_all(&WEIGHTS_MAGIC)?;
    out.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    out.write_all(&(net.parameters().len() as u32).to_le_bytes())?;
    for p in net.parameters() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.tensor.rank() as u32).to_le_bytes())?;
        for &d in p.tensor.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.tensor.len() * 4);
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()
}

pub fn save_weights(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_weights(net, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.origin,
                format!("truncated while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Parse a weights image and install it into a freshly built network for
/// `config`. Names and shapes must match the config parameter by parameter.
pub fn read_weights<R: Read>(
    mut input: R,
    config: NetworkConfig,
    origin: &Path,
) -> Result<Network<f32>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(origin, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        origin,
    };
    if cur.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::format(origin, "bad magic, expected CDW1"));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().expect("2 bytes"));
    if version != WEIGHTS_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported version {version}"),
        ));
    }
    let count = cur.u32("parameter count")? as usize;

    let mut net = Network::<f32>::build(config)?;
    if count != net.parameters().len() {
        return Err(Error::ParameterMismatch {
            name: "<count>".into(),
            detail: format!(
                "file holds {count} parameters, config needs {}",
                net.parameters().len()
            ),
        });
    }
    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::format(origin, "parameter name is not UTF-8"))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::format(
                origin,
                format!("parameter `{name}` has rank {rank}"),
            ));
        }
        let dims = (0..rank)
            .map(|_| cur.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        let raw = cur.take(len * 4, "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        loaded.push((name, dims, data));
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            origin,
            format!(
                "{} trailing bytes after last parameter",
                bytes.len() - cur.pos
            ),
        ));
    }
    for (param, (name, dims, _)) in net.parameters().iter().zip(&loaded) {
        if &param.name != name {
            return Err(Error::ParameterMismatch {
                name: name.clone(),
                detail: format!("config expects `{}` at this position", param.name),
            });
        }
        if param.tensor.shape() != dims.as_slice() {
            return Err(Error::ParameterMismatch {
                name: name.clone(),
                detail: format!(
                    "file shape {dims:?}, config shape {:?}",
                    param.tensor.shape()
                ),
            });
        }
    }
    for (param, (_, _, data)) in net.parameters_mut().iter_mut().zip(loaded) {
        param.tensor.data_mut().copy_from_slice(&data);
    }
    Ok(net)
}

pub fn load_weights(path: impl AsRef<Path>, config: NetworkConfig) -> Result<Network<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(BufReader::new(file), config, path)
}
