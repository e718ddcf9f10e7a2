//! Binary matrix container and atomic file writes.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header,
//! then every block's `f64` values in little-endian row-major order. The
//! header lists the blocks (`name`, `rows`, `cols`) in storage order plus a
//! free-form `meta` object.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RPMATv01";

/// One named dense matrix inside a container.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Block {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dims(format!("{rows}x{cols}"), data.len()));
        }
        Ok(Block {
            name: name.into(),
            rows,
            cols,
            data,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub blocks: Vec<Block>,
}

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    blocks: Vec<BlockHeader>,
}

impl Container {
    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            meta: self.meta.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockHeader {
                    name: b.name.clone(),
                    rows: b.rows,
                    cols: b.cols,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.blocks.iter().map(|b| b.data.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for b in &self.blocks {
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Validation(format!("{context}: {msg}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a matrix container"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::json(context, &e))?;
        let mut offset = 16 + hlen;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for bh in header.blocks {
            let n = bh.rows * bh.cols;
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| bad("truncated payload"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += 8 * n;
            blocks.push(Block {
                name: bh.name,
                rows: bh.rows,
                cols: bh.cols,
                data,
            });
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Container {
            meta: header.meta,
            blocks,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))
}
