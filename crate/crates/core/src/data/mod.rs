//! Slice datasets: NIfTI ingestion, preprocessing, splitting, synthetic
//! data and the packed on-disk cache.

mod manifest;
mod nifti;
mod pack;
mod preprocess;
mod split;
mod synth;

pub use manifest::{read_manifest, write_manifest, ManifestPair};
pub use nifti::{read_nifti, write_nifti, NiftiDatatype, NiftiHeader, Volume, VolumeKind};
pub use pack::{load_packed, pack_dataset, PackWriter, PackedDataset, PACK_MAGIC, PACK_VERSION};
pub use preprocess::{
    extract_axial_slices, normalize, percentile, preprocess_image, preprocess_pair, resize, resize_image, resize_mask,
    ResizeKind, Slice,
};
pub use split::{split, split_indices, SplitLevel, SplitSpec};
pub use synth::{synth_generate, SYNTH_SLICES_PER_VOLUME};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::{Shape, Tensor};

/// Slice height after preprocessing.
pub const SLICE_H: usize = 224;
/// Slice width after preprocessing.
pub const SLICE_W: usize = 192;

/// One preprocessed axial slice with its lesion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSample {
    volume_id: String,
    slice_index: usize,
    image: Vec<f32>,
    mask: Mask,
}

impl SliceSample {
    /// Enforces shape 224x192, image values in `[0, 1]` and a matching mask.
    pub fn new(volume_id: impl Into<String>, slice_index: usize, image: Vec<f32>, mask: Mask) -> Result<Self> {
        if image.len() != SLICE_H * SLICE_W {
            return Err(Error::shape("SliceSample", "pixels", SLICE_H * SLICE_W, image.len()));
        }
        if mask.height() != SLICE_H {
            return Err(Error::shape("SliceSample", "mask height", SLICE_H, mask.height()));
        }
        if mask.width() != SLICE_W {
            return Err(Error::shape("SliceSample", "mask width", SLICE_W, mask.width()));
        }
        if let Some((i, v)) = image.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "SliceSample",
                format!("image value {v} at index {i} outside [0, 1]"),
            ));
        }
        let volume_id = volume_id.into();
        if volume_id.len() > u16::MAX as usize {
            return Err(Error::invalid("SliceSample", "volume id longer than 65535 bytes"));
        }
        Ok(SliceSample {
            volume_id,
            slice_index,
            image,
            mask,
        })
    }

    pub fn volume_id(&self) -> &str {
        &self.volume_id
    }

    pub fn slice_index(&self) -> usize {
        self.slice_index
    }

    pub fn image(&self) -> &[f32] {
        &self.image
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn image_slice(&self) -> Slice {
        Slice::new(SLICE_H, SLICE_W, self.image.clone()).expect("sample dims are fixed")
    }

    /// Image as a `1x1xHxW` tensor, resized (bilinear) when `hw` differs
    /// from 224x192.
    pub fn image_tensor(&self, hw: (usize, usize)) -> Tensor<f32> {
        let data = if hw == (SLICE_H, SLICE_W) {
            self.image.clone()
        } else {
            resize(&self.image_slice(), hw, ResizeKind::Bilinear).into_data()
        };
        Tensor::from_vec(Shape::new(1, 1, hw.0, hw.1), data).expect("resize keeps the element count")
    }

    /// Mask as a `1x1xHxW` tensor of 0/1, resized (nearest) when needed.
    pub fn mask_tensor(&self, hw: (usize, usize)) -> Tensor<f32> {
        let mask = self.mask_at(hw);
        let data = mask.data().iter().map(|&v| v as f32).collect();
        Tensor::from_vec(Shape::new(1, 1, hw.0, hw.1), data).expect("mask dims match")
    }

    pub fn mask_at(&self, hw: (usize, usize)) -> Mask {
        if hw == (SLICE_H, SLICE_W) {
            self.mask.clone()
        } else {
            resize_mask(&self.mask, hw)
        }
    }
}
