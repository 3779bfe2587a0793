use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::linear_taps;

use super::nifti::{Volume, VolumeKind};
use super::{SliceSample, SLICE_H, SLICE_W};

/// A 2D real-valued slice, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Slice {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("Slice::new", "len", height * width, data.len()));
        }
        Ok(Slice { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }
}

/// Axial slices along the third axis, in index order. Slice `k` has
/// `d2` rows and `d1` columns: `slice[r][c] = volume[c, r, k]`.
pub fn extract_axial_slices(img: &Volume, mask: &Volume) -> Result<Vec<(Slice, Slice)>> {
    if img.dims != mask.dims {
        return Err(Error::VolumeMismatch {
            image: img.source.clone(),
            mask: mask.source.clone(),
            image_dims: img.dims,
            mask_dims: mask.dims,
        });
    }
    let (d1, d2, d3) = img.dims;
    let plane = d1 * d2;
    let take = |v: &Volume, k: usize| Slice {
        height: d2,
        width: d1,
        data: v.voxels[k * plane..(k + 1) * plane].to_vec(),
    };
    Ok((0..d3).map(|k| (take(img, k), take(mask, k))).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeKind {
    /// Half-pixel centres, edge-clamped (align_corners = false).
    Bilinear,
    /// Source index `floor(dst * in / out)`.
    Nearest,
}

fn nearest_index(dst: usize, in_len: usize, out_len: usize) -> usize {
    (dst * in_len / out_len).min(in_len - 1)
}

pub fn resize(slice: &Slice, target: (usize, usize), kind: ResizeKind) -> Slice {
    let (oh, ow) = target;
    let (h, w) = (slice.height, slice.width);
    let mut out = Vec::with_capacity(oh * ow);
    match kind {
        ResizeKind::Nearest => {
            for r in 0..oh {
                let sr = nearest_index(r, h, oh);
                for c in 0..ow {
                    out.push(slice.data[sr * w + nearest_index(c, w, ow)]);
                }
            }
        }
        ResizeKind::Bilinear => {
            let rows = linear_taps(h, oh);
            let cols = linear_taps(w, ow);
            let src = |r: usize, c: usize| slice.data[r * w + c] as f64;
            for &(r0, r1, lr) in &rows {
                for &(c0, c1, lc) in &cols {
                    let top = (1.0 - lc) * src(r0, c0) + lc * src(r0, c1);
                    let bot = (1.0 - lc) * src(r1, c0) + lc * src(r1, c1);
                    out.push(((1.0 - lr) * top + lr * bot) as f32);
                }
            }
        }
    }
    Slice {
        height: oh,
        width: ow,
        data: out,
    }
}

/// Bilinear resize clamped back into the input range.
pub fn resize_image(slice: &Slice, target: (usize, usize)) -> Slice {
    let lo = slice.data.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = slice.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out = resize(slice, target, ResizeKind::Bilinear);
    for v in &mut out.data {
        *v = v.clamp(lo, hi);
    }
    out
}

pub fn resize_mask(mask: &Mask, target: (usize, usize)) -> Mask {
    let (oh, ow) = target;
    let (h, w) = (mask.height(), mask.width());
    Mask::from_fn(oh, ow, |r, c| {
        mask.get(nearest_index(r, h, oh), nearest_index(c, w, ow))
    })
}

/// Percentile with linear interpolation between closest ranks
/// (`index = p/100 * (n - 1)`). `sorted` must be ascending and nonempty.
pub fn percentile(sorted: &[f32], p: f64) -> f64 {
    let n = sorted.len();
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] as f64 + frac * (sorted[hi] as f64 - sorted[lo] as f64)
}

/// Clips to the `[p_lo, p_hi]` percentiles of `values` and maps that range
/// onto `[0, 1]`. Constant input (or a degenerate range) maps to zeros.
/// Non-finite values are treated as the low percentile.
pub fn normalize(values: &[f32], p_lo: f64, p_hi: f64) -> Vec<f32> {
    let mut sorted: Vec<f32> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return vec![0.0; values.len()];
    }
    sorted.sort_unstable_by(f32::total_cmp);
    let lo = percentile(&sorted, p_lo);
    let hi = percentile(&sorted, p_hi);
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                return 0.0;
            }
            (((v as f64).clamp(lo, hi) - lo) / (hi - lo)) as f32
        })
        .collect()
}

/// Normalize (per volume, 0th..99th percentile), slice, and resize to 224x192.
pub fn preprocess_pair(img: &Volume, mask: &Volume, volume_id: &str) -> Result<Vec<SliceSample>> {
    if mask.kind != VolumeKind::Mask {
        return Err(Error::invalid(
            "preprocess_pair",
            "second volume must be loaded as a mask",
        ));
    }
    preprocess_volume(img, mask, volume_id)
}

/// As [`preprocess_pair`] for an unlabelled volume; masks are empty.
pub fn preprocess_image(img: &Volume, volume_id: &str) -> Result<Vec<SliceSample>> {
    let blank = Volume {
        voxels: vec![0.0; img.voxels.len()],
        kind: VolumeKind::Mask,
        ..img.clone()
    };
    preprocess_volume(img, &blank, volume_id)
}

fn preprocess_volume(img: &Volume, mask: &Volume, volume_id: &str) -> Result<Vec<SliceSample>> {
    let normalized = Volume {
        voxels: normalize(&img.voxels, 0.0, 99.0),
        ..img.clone()
    };
    extract_axial_slices(&normalized, mask)?
        .into_iter()
        .enumerate()
        .map(|(k, (image, m))| {
            let image = resize_image(&image, (SLICE_H, SLICE_W)).into_data();
            let m = Mask::from_fn(m.height, m.width, |r, c| m.get(r, c) != 0.0);
            SliceSample::new(volume_id, k, image, resize_mask(&m, (SLICE_H, SLICE_W)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_slice_stays_constant() {
        let s = Slice::new(3, 5, vec![0.25; 15]).unwrap();
        for kind in [ResizeKind::Bilinear, ResizeKind::Nearest] {
            let r = resize(&s, (7, 4), kind);
            assert!(r.data().iter().all(|&v| v == 0.25));
        }
    }

    #[test]
    fn percentile_matches_linear_rule() {
        let v = [1.0, 2.0, 3.0, 4.0, 10.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert!((percentile(&v, 90.0) - 7.6).abs() < 1e-12);
    }

    #[test]
    fn normalize_edges() {
        assert!(normalize(&[3.0; 10], 0.0, 99.0).iter().all(|&v| v == 0.0));
        let v: Vec<f32> = (0..=10).map(|i| i as f32 / 10.0).collect();
        assert_eq!(normalize(&v, 0.0, 100.0), v);
    }
}
