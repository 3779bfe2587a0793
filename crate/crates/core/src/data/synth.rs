//! Synthetic stand-ins for T1 slices: smooth bright background with dark
//! elliptical lesions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::Mask;

use super::preprocess::{resize, ResizeKind, Slice};
use super::{SliceSample, SLICE_H, SLICE_W};

/// Consecutive synthetic samples are grouped into pseudo-volumes of this size.
pub const SYNTH_SLICES_PER_VOLUME: usize = 8;

const COARSE_H: usize = 14;
const COARSE_W: usize = 12;
const LESION_DARKENING: f64 = 0.3;

/// Sample `i` depends only on `(seed, i)`, so prefixes of a larger set are
/// identical to smaller sets with the same seed.
pub fn synth_generate(n_samples: usize, lesion_prob: f64, seed: u64) -> Result<Vec<SliceSample>> {
    if n_samples == 0 {
        return Err(Error::invalid("synth_generate", "n_samples must be positive"));
    }
    if !(0.0..=1.0).contains(&lesion_prob) {
        return Err(Error::invalid(
            "synth_generate",
            format!("lesion_prob {lesion_prob} outside [0, 1]"),
        ));
    }
    (0..n_samples).map(|i| synth_one(i, lesion_prob, seed)).collect()
}

fn synth_one(i: usize, lesion_prob: f64, seed: u64) -> Result<SliceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);

    let coarse: Vec<f32> = (0..COARSE_H * COARSE_W).map(|_| rng.random_range(0.45..0.9)).collect();
    let smooth = resize(
        &Slice::new(COARSE_H, COARSE_W, coarse).expect("coarse grid dims"),
        (SLICE_H, SLICE_W),
        ResizeKind::Bilinear,
    );
    let mut image: Vec<f64> = smooth
        .data()
        .iter()
        .map(|&v| v as f64 + rng.random_range(-0.04..0.04))
        .collect();

    let mut lesion = vec![false; SLICE_H * SLICE_W];
    if rng.random::<f64>() < lesion_prob {
        let n_ellipses = rng.random_range(1..=3);
        for _ in 0..n_ellipses {
            let cr = rng.random_range(30.0..(SLICE_H as f64 - 30.0));
            let cc = rng.random_range(30.0..(SLICE_W as f64 - 30.0));
            let a = rng.random_range(8.0..24.0);
            let b = rng.random_range(8.0..24.0);
            let theta = rng.random_range(0.0..PI);
            let (sin, cos) = theta.sin_cos();
            for r in 0..SLICE_H {
                for c in 0..SLICE_W {
                    let dr = r as f64 - cr;
                    let dc = c as f64 - cc;
                    let u = (dr * cos + dc * sin) / a;
                    let v = (-dr * sin + dc * cos) / b;
                    if u * u + v * v <= 1.0 {
                        lesion[r * SLICE_W + c] = true;
                    }
                }
            }
        }
    }
    for (px, &inside) in image.iter_mut().zip(&lesion) {
        if inside {
            *px *= LESION_DARKENING;
        }
    }
    let image = image.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    let mask = Mask::new(SLICE_H, SLICE_W, lesion.into_iter().map(u8::from).collect())?;
    SliceSample::new(
        format!("synth{:03}", i / SYNTH_SLICES_PER_VOLUME),
        i % SYNTH_SLICES_PER_VOLUME,
        image,
        mask,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lesion_probability_extremes() {
        assert!(synth_generate(6, 0.0, 3).unwrap().iter().all(|s| s.mask().is_empty()));
        assert!(synth_generate(6, 1.0, 3).unwrap().iter().all(|s| !s.mask().is_empty()));
    }

    #[test]
    fn seeded_and_prefix_stable() {
        let a = synth_generate(5, 0.5, 11).unwrap();
        let b = synth_generate(3, 0.5, 11).unwrap();
        assert_eq!(&a[..3], &b[..]);
        assert_ne!(synth_generate(1, 0.5, 12).unwrap()[0], a[0]);
    }

    #[test]
    fn lesions_are_darker() {
        for s in synth_generate(4, 1.0, 5).unwrap() {
            let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
            for (&v, &m) in s.image().iter().zip(s.mask().data()) {
                if m == 1 {
                    inside += v;
                    n_in += 1;
                } else {
                    outside += v;
                    n_out += 1;
                }
            }
            assert!(inside / (n_in as f32) < 0.5 * outside / (n_out as f32));
        }
    }
}
