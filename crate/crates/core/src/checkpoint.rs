//! `VCAW` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "VCAW"
//! version      u32
//! config_len   u32, followed by config_len bytes of UTF-8 `key=value\n` lines
//! entry_count  u32
//! per entry:
//!   name_len   u16, followed by the UTF-8 name
//!   dtype      u8   (0 = f32, 1 = f64)
//!   rank       u8
//!   dims       rank x u32
//!   values     product(dims) little-endian elements
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"VCAW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u32>,
    /// Raw little-endian element bytes.
    pub bytes: Vec<u8>,
}

impl Entry {
    /// `rank` leading dimensions of the tensor shape are recorded; the
    /// remainder must be 1.
    pub fn from_tensor<T: Scalar>(name: &str, t: &Tensor<T>, rank: usize) -> Self {
        let dims = t.shape().dims()[..rank.clamp(1, 4)].iter().map(|&d| d as u32).collect();
        Entry {
            name: name.to_string(),
            dtype: T::DTYPE,
            dims,
            bytes: T::to_le_bytes_vec(t.data()),
        }
    }

    pub fn shape(&self) -> Shape {
        let mut d = [1usize; 4];
        for (slot, &v) in d.iter_mut().zip(&self.dims) {
            *slot = v as usize;
        }
        Shape::new(d[0], d[1], d[2], d[3])
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let shape = self.shape();
        let values: Vec<T> = match self.dtype {
            DType::F32 => self
                .bytes
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_chunk(c) as f64))
                .collect(),
            DType::F64 => self
                .bytes
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_chunk(c)))
                .collect(),
        };
        Tensor::from_vec(shape, values)
    }
}

/// Ordered config echo plus named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype as u8);
            out.push(e.dims.len() as u8);
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&e.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "checkpoint header")?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: "VCAW".into(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32("checkpoint header")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let config_len = r.u32("checkpoint config")? as usize;
        let config_text =
            std::str::from_utf8(r.take(config_len, "checkpoint config")?).map_err(|e| Error::Malformed {
                what: "checkpoint config",
                msg: e.to_string(),
            })?;
        let mut config = Vec::new();
        for line in config_text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Malformed {
                what: "checkpoint config",
                msg: format!("line without '=': {line:?}"),
            })?;
            config.push((k.to_string(), v.to_string()));
        }
        let count = r.u32("checkpoint entry table")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16("checkpoint entry")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "checkpoint entry")?)
                .map_err(|e| Error::Malformed {
                    what: "checkpoint entry name",
                    msg: e.to_string(),
                })?
                .to_string();
            let dtype = match r.u8("checkpoint entry")? {
                0 => DType::F32,
                1 => DType::F64,
                t => {
                    return Err(Error::Malformed {
                        what: "checkpoint entry",
                        msg: format!("unknown dtype tag {t} for `{name}`"),
                    })
                }
            };
            let rank = r.u8("checkpoint entry")? as usize;
            if rank == 0 || rank > 4 {
                return Err(Error::Malformed {
                    what: "checkpoint entry",
                    msg: format!("rank {rank} for `{name}`"),
                });
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("checkpoint entry")?);
            }
            let width = if dtype == DType::F32 { 4 } else { 8 };
            let numel: usize = dims.iter().map(|&d| d as usize).product();
            let data = r.take(numel * width, "checkpoint tensor data")?.to_vec();
            entries.push(Entry {
                name,
                dtype,
                dims,
                bytes: data,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed {
                what: "checkpoint",
                msg: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint { config, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated {
                what,
                needed: n,
                found: self.bytes.len() - self.pos,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
