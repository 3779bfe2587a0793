//! Minimal single-file NIfTI-1 support: `.nii` or gzip-compressed `.nii.gz`,
//! datatypes uint8, int16 and float32, either byte order.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Float32,
}

impl NiftiDatatype {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDatatype::Uint8),
            4 => Ok(NiftiDatatype::Int16),
            16 => Ok(NiftiDatatype::Float32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::Uint8 => 2,
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Float32 => 16,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            NiftiDatatype::Uint8 => 1,
            NiftiDatatype::Int16 => 2,
            NiftiDatatype::Float32 => 4,
        }
    }
}

/// The header fields this reader uses.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub little_endian: bool,
    pub dim: [i16; 8],
    pub datatype: NiftiDatatype,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    /// `"n+1"` (single file) or `"ni1"` (header/image pair).
    pub magic: String,
}

struct Reader<'a> {
    bytes: &'a [u8],
    le: bool,
}

impl Reader<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.le {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }

    fn f32(&self, at: usize) -> f32 {
        let b = [
            self.bytes[at],
            self.bytes[at + 1],
            self.bytes[at + 2],
            self.bytes[at + 3],
        ];
        if self.le {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    }
}

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::Truncated {
                what: "NIfTI header",
                needed: HEADER_SIZE,
                found: bytes.len(),
            });
        }
        let raw = [bytes[0], bytes[1], bytes[2], bytes[3]];
        let le = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
            true
        } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
            false
        } else {
            return Err(Error::InvalidHeader(format!(
                "sizeof_hdr is {} (little-endian) / {} (big-endian), expected 348",
                i32::from_le_bytes(raw),
                i32::from_be_bytes(raw)
            )));
        };
        let magic_bytes = &bytes[344..348];
        let magic = match magic_bytes {
            b"n+1\0" => "n+1",
            b"ni1\0" => "ni1",
            _ => {
                return Err(Error::BadMagic {
                    expected: "n+1".into(),
                    found: String::from_utf8_lossy(magic_bytes).trim_end_matches('\0').to_string(),
                })
            }
        };
        let r = Reader { bytes, le };
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = r.i16(40 + 2 * i);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = r.f32(76 + 4 * i);
        }
        let header = NiftiHeader {
            little_endian: le,
            dim,
            datatype: NiftiDatatype::from_code(r.i16(70))?,
            bitpix: r.i16(72),
            pixdim,
            vox_offset: r.f32(108),
            scl_slope: r.f32(112),
            scl_inter: r.f32(116),
            magic: magic.to_string(),
        };
        header.spatial_dims()?;
        Ok(header)
    }

    /// `(d1, d2, d3)`; higher dimensions must be singleton.
    pub fn spatial_dims(&self) -> Result<(usize, usize, usize)> {
        let rank = self.dim[0];
        if !(3..=7).contains(&rank) {
            return Err(Error::InvalidHeader(format!("dim[0] = {rank}, expected a 3D volume")));
        }
        if let Some(d) = self.dim[4..=rank as usize].iter().find(|&&d| d != 1) {
            return Err(Error::InvalidHeader(format!(
                "only 3D volumes are supported, found extra dimension {d}"
            )));
        }
        let d: Vec<usize> = self.dim[1..4]
            .iter()
            .map(|&v| {
                if v > 0 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidHeader(format!("non-positive dimension {v}")))
                }
            })
            .collect::<Result<_>>()?;
        Ok((d[0], d[1], d[2]))
    }

    fn scaling(&self) -> Option<(f32, f32)> {
        (self.scl_slope != 0.0 && self.scl_slope.is_finite()).then_some((self.scl_slope, self.scl_inter))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeKind {
    Image,
    Mask,
}

/// Decoded voxels in NIfTI order (first axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: (usize, usize, usize),
    pub voxels: Vec<f32>,
    pub source: PathBuf,
    pub kind: VolumeKind,
}

impl Volume {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        let (d1, d2, _) = self.dims;
        self.voxels[i + d1 * (j + d2 * k)]
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads a volume and applies `scl_slope`/`scl_inter` when the slope is
/// nonzero. Mask volumes are snapped to `{0, 1}` (within 1e-3) and any other
/// value is an error.
pub fn read_nifti(path: &Path, kind: VolumeKind) -> Result<Volume> {
    let bytes = read_maybe_gz(path)?;
    let header = NiftiHeader::parse(&bytes)?;
    let dims = header.spatial_dims()?;
    let count = dims.0 * dims.1 * dims.2;
    let needed = count * header.datatype.bytes();

    let paired;
    let data: &[u8] = if header.magic == "ni1" {
        let img = path.with_extension("img");
        paired = read_maybe_gz(&img)?;
        let offset = header.vox_offset.max(0.0) as usize;
        paired.get(offset..).unwrap_or(&[])
    } else {
        let offset = header.vox_offset as usize;
        if header.vox_offset.is_nan() || header.vox_offset < HEADER_SIZE as f32 {
            return Err(Error::InvalidHeader(format!(
                "vox_offset {} lies inside the header",
                header.vox_offset
            )));
        }
        bytes.get(offset..).unwrap_or(&[])
    };
    if data.len() < needed {
        return Err(Error::Truncated {
            what: "NIfTI voxel data",
            needed,
            found: data.len(),
        });
    }

    let le = header.little_endian;
    let mut voxels: Vec<f32> = match header.datatype {
        NiftiDatatype::Uint8 => data[..needed].iter().map(|&b| b as f32).collect(),
        NiftiDatatype::Int16 => data[..needed]
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                (if le {
                    i16::from_le_bytes(b)
                } else {
                    i16::from_be_bytes(b)
                }) as f32
            })
            .collect(),
        NiftiDatatype::Float32 => data[..needed]
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                if le {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                }
            })
            .collect(),
    };
    if let Some((slope, inter)) = header.scaling() {
        for v in &mut voxels {
            *v = slope * *v + inter;
        }
    }
    if kind == VolumeKind::Mask {
        for (index, v) in voxels.iter_mut().enumerate() {
            let snapped = v.round();
            if (*v - snapped).abs() > 1e-3 || !(snapped == 0.0 || snapped == 1.0) {
                return Err(Error::NonBinary {
                    value: *v as f64,
                    index,
                });
            }
            *v = snapped;
        }
    }
    Ok(Volume {
        dims,
        voxels,
        source: path.to_path_buf(),
        kind,
    })
}

/// Writes a little-endian single-file volume; gzip-compressed when the path
/// ends in `.gz`. Values are cast to `datatype` (rounded for integer types).
pub fn write_nifti(path: &Path, dims: (usize, usize, usize), voxels: &[f32], datatype: NiftiDatatype) -> Result<()> {
    if voxels.len() != dims.0 * dims.1 * dims.2 {
        return Err(Error::shape(
            "write_nifti",
            "voxels",
            dims.0 * dims.1 * dims.2,
            voxels.len(),
        ));
    }
    for d in [dims.0, dims.1, dims.2] {
        if d == 0 || d > i16::MAX as usize {
            return Err(Error::invalid("write_nifti", format!("dimension {d} out of range")));
        }
    }
    let mut out = vec![0u8; 352];
    out[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dim: [i16; 8] = [3, dims.0 as i16, dims.1 as i16, dims.2 as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        out[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    out[70..72].copy_from_slice(&datatype.code().to_le_bytes());
    out[72..74].copy_from_slice(&((datatype.bytes() * 8) as i16).to_le_bytes());
    for i in 0..8 {
        out[76 + 4 * i..80 + 4 * i].copy_from_slice(&1f32.to_le_bytes());
    }
    out[108..112].copy_from_slice(&352f32.to_le_bytes());
    out[344..348].copy_from_slice(b"n+1\0");
    for &v in voxels {
        match datatype {
            NiftiDatatype::Uint8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            NiftiDatatype::Int16 => out.extend_from_slice(&(v.round().clamp(-32768.0, 32767.0) as i16).to_le_bytes()),
            NiftiDatatype::Float32 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    let gz = path.extension().is_some_and(|e| e == "gz");
    let bytes = if gz {
        use std::io::Write;
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&out).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        out
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
