//! Binary checkpoint: `"DIMC" | version u32 | config (u32 length + JSON) |
//! tensor count u32 | records`, where each record is `name length u32 |
//! name bytes | rank u32 | dims u32 x rank | payload f32`. All integers and
//! floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::Tensor;
use crate::unet::{init_params, UNetConfig};

pub const MAGIC: &[u8; 4] = b"DIMC";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(cfg: &UNetConfig, params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(cfg)?;
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, params.len())?;
    for (name, tensor) in params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.rank())?;
        for &d in tensor.dims() {
            put_u32(&mut out, d)?;
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a checkpoint and checks its tensors against the layout implied by
/// the stored network configuration.
pub fn decode(bytes: &[u8]) -> Result<(UNetConfig, ModelParams<f32>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.u32()?;
    let cfg: UNetConfig = serde_json::from_slice(r.take(len)?)?;
    let count = r.u32()?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        params.insert(name, Tensor::new(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    init_params::<f32>(&cfg, 0)?.check_layout(&params).map_err(|e| bad(format!("layout mismatch: {e}")))?;
    Ok((cfg, params))
}

pub fn save(path: &Path, cfg: &UNetConfig, params: &ModelParams<f32>) -> Result<()> {
    fs::write(path, encode(cfg, params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(UNetConfig, ModelParams<f32>)> {
    let bytes = fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}
