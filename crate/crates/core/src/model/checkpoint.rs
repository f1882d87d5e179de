//! Checkpoint container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic    "EPCK"
//! u32      format version (1)
//! u32      manifest length, then that many bytes of UTF-8 JSON
//! u32      array count
//! per array:
//!   u32    name length, then the UTF-8 name
//!   u32    rows
//!   u32    cols
//!   f32    rows * cols values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EditModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const MAGIC: &[u8; 4] = b"EPCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub vocab_hash: Option<String>,
    pub step: u64,
    /// Fully resolved run configuration that produced the checkpoint.
    #[serde(default)]
    pub run_config: serde_json::Value,
}

pub fn write<W: Write>(mut w: W, model: &EditModel, manifest: &Manifest) -> Result<()> {
    let io = |e| Error::io("writing checkpoint", e);
    let json = serde_json::to_vec(manifest)?;
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    let params = &model.params;
    w.write_all(&(params.mats.len() as u32).to_le_bytes()).map_err(io)?;
    let mut buf = Vec::new();
    for (name, m) in params.names.iter().zip(&params.mats) {
        buf.clear();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for v in &m.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::io("reading checkpoint", e))?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)
        .map_err(|e| Error::io("reading checkpoint", e))?;
    Ok(b)
}

pub fn read<R: Read>(mut r: R) -> Result<(EditModel, Manifest)> {
    let magic = read_bytes(&mut r, 4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let manifest: Manifest = serde_json::from_slice(&read_bytes(&mut r, len)?)?;
    let count = read_u32(&mut r)? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let n = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_bytes(&mut r, n)?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let raw = read_bytes(&mut r, rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        named.push((name, Mat::from_vec(rows, cols, data)));
    }
    let model = EditModel::from_named(manifest.config.clone(), named)?;
    Ok((model, manifest))
}

pub fn save(path: &Path, model: &EditModel, manifest: &Manifest) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write(std::io::BufWriter::new(file), model, manifest)
}

pub fn load(path: &Path) -> Result<(EditModel, Manifest)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read(std::io::BufReader::new(file))
}
