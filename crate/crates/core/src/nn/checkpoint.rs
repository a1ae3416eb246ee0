//! Flat binary parameter container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "GVAE" version count
//! count × { name_len name_utf8 rank dims[rank] f32_le[product(dims)] }
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GVAE";
pub const VERSION: u32 = 1;

/// Ordered named tensors, stored as `f32`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let r = &mut bytes;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "header")?;
        if &magic != MAGIC {
            return Err(Error::format("checkpoint header", "bad magic"));
        }
        let version = read_u32(r, "header")?;
        if version != VERSION {
            return Err(Error::format("checkpoint header", format!("unsupported version {version}")));
        }
        let count = read_u32(r, "header")?;
        let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
        for i in 0..count {
            let ctx = format!("record {i}");
            let len = read_u32(r, &ctx)? as usize;
            if len > r.len() {
                return Err(Error::format(ctx, "truncated name"));
            }
            let mut name = vec![0u8; len];
            read_exact(r, &mut name, &ctx)?;
            let name = String::from_utf8(name).map_err(|_| Error::format(&ctx, "name is not UTF-8"))?;
            let rank = read_u32(r, &name)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(read_u32(r, &name)? as usize);
            }
            let numel: usize = shape.iter().product();
            if numel.saturating_mul(4) > r.len() {
                return Err(Error::format(&name, "truncated data"));
            }
            let data = (0..numel)
                .map(|_| read_u32(r, &name).map(f32::from_bits))
                .collect::<Result<Vec<_>>>()?;
            entries.push((name.clone(), Tensor::new(shape, data)?));
        }
        if !r.is_empty() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], ctx: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::format(ctx, "unexpected end of file"))
}

fn read_u32(r: &mut &[u8], ctx: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, ctx)?;
    Ok(u32::from_le_bytes(b))
}
