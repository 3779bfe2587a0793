//! `VCAD` packed slice cache.
//!
//! ```text
//! magic    4 bytes "VCAD"
//! version  u32
//! count    u32
//! per sample:
//!   volume_id    u16 length + UTF-8
//!   slice_index  u32
//!   image        224*192 f32
//!   mask         224*192 u8
//! ```
//!
//! All integers and floats little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::mask::Mask;

use super::{SliceSample, SLICE_H, SLICE_W};

pub const PACK_MAGIC: &[u8; 4] = b"VCAD";
pub const PACK_VERSION: u32 = 1;

const HEADER_LEN: u64 = 12;
const PIXELS: usize = SLICE_H * SLICE_W;
const PAYLOAD: u64 = (PIXELS * 5) as u64;

/// Streams samples to disk; the count is patched in by [`PackWriter::finish`].
pub struct PackWriter {
    path: PathBuf,
    out: BufWriter<File>,
    count: u32,
}

impl PackWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(PACK_MAGIC);
        header.extend_from_slice(&PACK_VERSION.to_le_bytes());
        header.extend_from_slice(&0u32.to_le_bytes());
        out.write_all(&header).map_err(|e| Error::io(path, e))?;
        Ok(PackWriter {
            path: path.to_path_buf(),
            out,
            count: 0,
        })
    }

    pub fn push(&mut self, sample: &SliceSample) -> Result<()> {
        if self.count == u32::MAX {
            return Err(Error::invalid("PackWriter::push", "more than u32::MAX samples"));
        }
        let slice_index = u32::try_from(sample.slice_index())
            .map_err(|_| Error::invalid("PackWriter::push", "slice index exceeds u32"))?;
        let id = sample.volume_id().as_bytes();
        let mut buf = Vec::with_capacity(6 + id.len() + PAYLOAD as usize);
        buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&slice_index.to_le_bytes());
        for v in sample.image() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(sample.mask().data());
        self.out.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u32> {
        let path = self.path.clone();
        let io = |e| Error::io(&path, e);
        self.out.flush().map_err(io)?;
        let mut file = self.out.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
        file.seek(SeekFrom::Start(8)).map_err(io)?;
        file.write_all(&self.count.to_le_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        Ok(self.count)
    }
}

pub fn pack_dataset(samples: &[SliceSample], path: &Path) -> Result<()> {
    let mut w = PackWriter::create(path)?;
    for s in samples {
        w.push(s)?;
    }
    w.finish()?;
    Ok(())
}

#[derive(Clone, Debug)]
struct IndexEntry {
    volume_id: String,
    slice_index: usize,
    payload_offset: u64,
}

/// Random access over a packed file. Opening reads only the per-sample ids,
/// so memory use is independent of image data size.
#[derive(Debug)]
pub struct PackedDataset {
    path: PathBuf,
    file: Mutex<File>,
    index: Vec<IndexEntry>,
}

impl PackedDataset {
    /// Validates magic, version and the full entry layout against the file
    /// length before returning.
    pub fn open(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let file = File::open(path).map_err(io)?;
        let file_len = file.metadata().map_err(io)?.len();
        let mut r = BufReader::new(file);

        let truncated = |needed: u64| Error::Truncated {
            what: "packed dataset",
            needed: needed as usize,
            found: file_len as usize,
        };
        if file_len < HEADER_LEN {
            return Err(truncated(HEADER_LEN));
        }
        let mut header = [0u8; HEADER_LEN as usize];
        r.read_exact(&mut header).map_err(io)?;
        if &header[0..4] != PACK_MAGIC {
            return Err(Error::BadMagic {
                expected: "VCAD".into(),
                found: String::from_utf8_lossy(&header[0..4]).into_owned(),
            });
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != PACK_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;

        let mut index = Vec::with_capacity(count.min(1 << 20));
        let mut pos = HEADER_LEN;
        for _ in 0..count {
            if pos + 2 > file_len {
                return Err(truncated(pos + 2));
            }
            let mut len = [0u8; 2];
            r.read_exact(&mut len).map_err(io)?;
            let id_len = u16::from_le_bytes(len) as u64;
            let payload_offset = pos + 2 + id_len + 4;
            let end = payload_offset + PAYLOAD;
            if end > file_len {
                return Err(truncated(end));
            }
            let mut id = vec![0u8; id_len as usize];
            r.read_exact(&mut id).map_err(io)?;
            let mut si = [0u8; 4];
            r.read_exact(&mut si).map_err(io)?;
            let volume_id = String::from_utf8(id).map_err(|_| Error::Malformed {
                what: "packed dataset",
                msg: format!("volume id at byte {pos} is not UTF-8"),
            })?;
            index.push(IndexEntry {
                volume_id,
                slice_index: u32::from_le_bytes(si) as usize,
                payload_offset,
            });
            r.seek_relative(PAYLOAD as i64).map_err(io)?;
            pos = end;
        }
        if pos != file_len {
            return Err(Error::Malformed {
                what: "packed dataset",
                msg: format!("{} trailing bytes after {count} samples", file_len - pos),
            });
        }
        Ok(PackedDataset {
            path: path.to_path_buf(),
            file: Mutex::new(r.into_inner()),
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// `(volume_id, slice_index)` without touching pixel data.
    pub fn id(&self, i: usize) -> (&str, usize) {
        let e = &self.index[i];
        (&e.volume_id, e.slice_index)
    }

    pub fn get(&self, i: usize) -> Result<SliceSample> {
        let entry = self
            .index
            .get(i)
            .ok_or_else(|| Error::invalid("PackedDataset::get", format!("index {i} out of range ({})", self.len())))?;
        let mut buf = vec![0u8; PAYLOAD as usize];
        {
            let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
            f.seek(SeekFrom::Start(entry.payload_offset))
                .and_then(|_| f.read_exact(&mut buf))
                .map_err(|e| Error::io(&self.path, e))?;
        }
        let (img, mask) = buf.split_at(PIXELS * 4);
        let image = img
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mask = Mask::new(SLICE_H, SLICE_W, mask.to_vec())?;
        SliceSample::new(entry.volume_id.clone(), entry.slice_index, image, mask)
    }
}

pub fn load_packed(path: &Path) -> Result<Vec<SliceSample>> {
    let ds = PackedDataset::open(path)?;
    (0..ds.len()).map(|i| ds.get(i)).collect()
}
