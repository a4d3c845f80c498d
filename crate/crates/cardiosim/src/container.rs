//! Binary container used for meshes, snapshot sets, and POD bases.
//!
//! Layout:
//! ```text
//! bytes 0..8    magic b"CSIMBLK1"
//! bytes 8..12   u32 little-endian header length L
//! bytes 12..12+L  UTF-8 JSON header
//! then the raw blocks, in the order listed in the header
//! ```
//!
//! The header carries `format_version`, a `kind` string, arbitrary
//! kind-specific metadata under `meta`, and a `blocks` array of
//! `{name, dtype, count}` entries. Supported dtypes: `f64`, `u32`, `u8`,
//! all little-endian. Numeric payloads round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CSIMBLK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDesc {
    pub name: String,
    pub dtype: String,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub blocks: Vec<BlockDesc>,
}

#[derive(Debug, Clone)]
pub enum Block {
    F64(Vec<f64>),
    U32(Vec<u32>),
    U8(Vec<u8>),
}

impl Block {
    fn dtype(&self) -> &'static str {
        match self {
            Block::F64(_) => "f64",
            Block::U32(_) => "u32",
            Block::U8(_) => "u8",
        }
    }

    fn count(&self) -> u64 {
        match self {
            Block::F64(v) => v.len() as u64,
            Block::U32(v) => v.len() as u64,
            Block::U8(v) => v.len() as u64,
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match self {
            Block::F64(v) => Ok(v),
            _ => Err(Error::Numerical(format!(
                "expected f64 block, found {}",
                self.dtype()
            ))),
        }
    }

    pub fn as_u32(&self) -> Result<&[u32]> {
        match self {
            Block::U32(v) => Ok(v),
            _ => Err(Error::Numerical(format!(
                "expected u32 block, found {}",
                self.dtype()
            ))),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match self {
            Block::U8(v) => Ok(v),
            _ => Err(Error::Numerical(format!(
                "expected u8 block, found {}",
                self.dtype()
            ))),
        }
    }
}

pub struct Container {
    pub header: Header,
    pub blocks: Vec<Block>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Container {
            header: Header {
                format_version: FORMAT_VERSION,
                kind: kind.to_string(),
                meta,
                blocks: Vec::new(),
            },
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, block: Block) {
        self.header.blocks.push(BlockDesc {
            name: name.to_string(),
            dtype: block.dtype().to_string(),
            count: block.count(),
        });
        self.blocks.push(block);
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.header
            .blocks
            .iter()
            .position(|b| b.name == name)
            .map(|i| &self.blocks[i])
            .ok_or_else(|| Error::Numerical(format!("container has no block named `{name}`")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        let header_json = serde_json::to_vec(&self.header)?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())?;
        w.write_all(&header_json)?;
        for block in &self.blocks {
            match block {
                Block::F64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                Block::U32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                Block::U8(v) => w.write_all(v)?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Container> {
        let fmt_err = |message: String| Error::Format {
            path: path.display().to_string(),
            message,
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(fmt_err("bad magic bytes".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let header_len = u32::from_le_bytes(len) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;
        if header.format_version != FORMAT_VERSION {
            return Err(fmt_err(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for desc in &header.blocks {
            let n = desc.count as usize;
            let block = match desc.dtype.as_str() {
                "f64" => {
                    let mut buf = vec![0u8; n * 8];
                    r.read_exact(&mut buf)?;
                    Block::F64(
                        buf.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                "u32" => {
                    let mut buf = vec![0u8; n * 4];
                    r.read_exact(&mut buf)?;
                    Block::U32(
                        buf.chunks_exact(4)
                            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                "u8" => {
                    let mut buf = vec![0u8; n];
                    r.read_exact(&mut buf)?;
                    Block::U8(buf)
                }
                other => return Err(fmt_err(format!("unknown block dtype `{other}`"))),
            };
            blocks.push(block);
        }
        Ok(Container { header, blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let mut c = Container::new("test", serde_json::json!({"note": 1}));
        let floats = vec![0.1, -3.5e-300, f64::MAX, 1.0 / 3.0];
        c.push("f", Block::F64(floats.clone()));
        c.push("i", Block::U32(vec![0, 7, u32::MAX]));
        c.push("b", Block::U8(vec![1, 2, 3]));
        c.write(&path).unwrap();

        let back = Container::read(&path).unwrap();
        assert_eq!(back.header.kind, "test");
        let f = back.block("f").unwrap().as_f64().unwrap();
        for (a, b) in f.iter().zip(&floats) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.block("i").unwrap().as_u32().unwrap(), &[0, 7, u32::MAX]);
        assert_eq!(back.block("b").unwrap().as_u8().unwrap(), &[1, 2, 3]);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTMAGIC____________").unwrap();
        assert!(Container::read(&path).is_err());
    }
}
