use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One image/mask volume pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestPair {
    pub image: PathBuf,
    pub mask: PathBuf,
}

impl ManifestPair {
    /// File name of the image with `.nii`/`.nii.gz` stripped.
    pub fn volume_id(&self) -> String {
        let name = self
            .image
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        name.trim_end_matches(".gz").trim_end_matches(".nii").to_string()
    }
}

/// Tab-separated `image<TAB>mask` lines. Blank lines and `#` comments are
/// skipped; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(image), Some(mask), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Malformed {
                what: "manifest",
                msg: format!("{}:{}: expected `image<TAB>mask`", path.display(), lineno + 1),
            });
        };
        pairs.push(ManifestPair {
            image: base.join(image.trim()),
            mask: base.join(mask.trim()),
        });
    }
    Ok(pairs)
}

pub fn write_manifest(path: &Path, pairs: &[ManifestPair]) -> Result<()> {
    let mut text = String::new();
    for p in pairs {
        text.push_str(&format!("{}\t{}\n", p.image.display(), p.mask.display()));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
