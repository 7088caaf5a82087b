//! `CKPT` container: magic, version byte, little-endian u32 entry count,
//! then per entry a u16 name length, the UTF-8 name, and an embedded `TNSR`
//! record.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{OffsetReader, Tensor};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let io = |e| Error::io("<checkpoint>", e);
        w.write_all(CKPT_MAGIC).map_err(io)?;
        w.write_all(&[CKPT_VERSION]).map_err(io)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes()).map_err(io)?;
        for (name, t) in &self.entries {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::Value(format!("checkpoint entry name too long: {name}")))?;
            w.write_all(&len.to_le_bytes()).map_err(io)?;
            w.write_all(bytes).map_err(io)?;
            t.write_tnsr(w).map_err(io)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("in-memory write");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut r = OffsetReader {
            inner: &mut cursor,
            offset: 0,
        };
        let magic: [u8; 4] = r.array("magic")?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {magic:?}, expected \"CKPT\""),
            });
        }
        let [version] = r.array::<1>("version")?;
        if version != CKPT_VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let count = u32::from_le_bytes(r.array("entry count")?);
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.array("name length")?) as usize;
            let name_at = r.offset;
            let mut name = vec![0u8; len];
            r.fill(&mut name, "entry name")?;
            let name = String::from_utf8(name).map_err(|_| Error::Format {
                offset: name_at,
                reason: "entry name is not UTF-8".into(),
            })?;
            let at = r.offset;
            let consumed_before = bytes.len() - r.inner.len();
            let t = Tensor::read_tnsr(r.inner, at)?;
            let consumed_after = bytes.len() - r.inner.len();
            r.offset += (consumed_after - consumed_before) as u64;
            entries.push((name, t));
        }
        if !r.inner.is_empty() {
            return Err(Error::Format {
                offset: r.offset,
                reason: format!("{} trailing bytes", r.inner.len()),
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
