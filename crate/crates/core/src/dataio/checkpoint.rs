//! Binary checkpoint format.
//!
//! ```text
//! "GACP" | version: u32 | count: u32 | count × tensor
//! tensor = name_len: u32 | name: UTF-8 | rank: u32 | dims: rank × u32 | data: f32 × ∏dims
//! ```
//!
//! All integers and floats are little-endian. The first tensor is named
//! `arch:<descriptor>` and holds the per-sample input shape; the rest are
//! the network's parameters and buffers by name.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GACP";
pub const VERSION: u32 = 1;
const ARCH_PREFIX: &str = "arch:";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_bytes<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let tensors = net.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, tensors.len() as u32 + 1);
    let spec = net.spec();
    let arch = format!("{ARCH_PREFIX}{}", spec.descriptor());
    put_tensor(&mut out, &arch, &[spec.input.len()], spec.input.iter().map(|&d| d as f32));
    for (name, t) in &tensors {
        put_tensor(&mut out, name, t.shape(), t.data().iter().map(|v| v.as_f64() as f32));
    }
    out
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(net))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Network<T>> {
    network_from_bytes(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedFile)?;
        let slice = self.bytes.get(self.pos..end).ok_or(Error::TruncatedFile)?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes every tensor of a checkpoint, in file order.
pub fn read_tensors<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) { Error::TruncatedFile } else { Error::BadMagic });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::CorruptFile("tensor name is not UTF-8".into()))?.to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(Error::TruncatedFile)?;
        let raw = r.take(n.checked_mul(4).ok_or(Error::TruncatedFile)?)?;
        let data = raw.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect();
        let t = Tensor::new(&dims, data).map_err(|_| Error::CorruptFile(format!("tensor {name} has an invalid shape {dims:?}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptFile("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn network_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let mut tensors = read_tensors::<T>(bytes)?;
    if tensors.is_empty() || !tensors[0].0.starts_with(ARCH_PREFIX) {
        return Err(Error::CorruptFile("missing architecture record".into()));
    }
    let (arch, input) = tensors.remove(0);
    let spec = NetworkSpec::parse(&arch[ARCH_PREFIX.len()..])?;
    let stored: Vec<usize> = input.data().iter().map(|v| v.as_f64() as usize).collect();
    if stored != spec.input {
        return Err(Error::CorruptFile("architecture input shape disagrees with descriptor".into()));
    }
    Network::from_named(spec, tensors)
}
