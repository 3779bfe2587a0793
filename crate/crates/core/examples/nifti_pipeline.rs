//! Writes a small image/mask NIfTI pair, then reads, slices, resizes,
//! normalizes, packs and reloads it.
use std::path::PathBuf;

use vcaseg::data::{load_packed, pack_dataset, preprocess_pair, read_nifti, write_nifti, NiftiDatatype, VolumeKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vcaseg_nifti_example"));
    std::fs::create_dir_all(&dir)?;
    let (nx, ny, nz) = (60, 70, 5);
    let mut img = Vec::with_capacity(nx * ny * nz);
    let mut msk = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let d2 = (x as f64 - 30.0).powi(2) + (y as f64 - 35.0).powi(2);
                let lesion = z >= 2 && d2 < 36.0;
                img.push(if lesion {
                    40.0
                } else {
                    100.0 + ((x * y + z) % 13) as f32
                });
                msk.push(if lesion { 1.0 } else { 0.0 });
            }
        }
    }
    let (ip, mp) = (dir.join("sub01.nii.gz"), dir.join("sub01_mask.nii.gz"));
    write_nifti(&ip, (nx, ny, nz), &img, NiftiDatatype::Int16)?;
    write_nifti(&mp, (nx, ny, nz), &msk, NiftiDatatype::Uint8)?;

    let image = read_nifti(&ip, VolumeKind::Image)?;
    let mask = read_nifti(&mp, VolumeKind::Mask)?;
    println!("read {:?} image and mask", image.dims);
    let samples = preprocess_pair(&image, &mask, "sub01")?;
    for s in &samples {
        let fg = s.mask().data().iter().filter(|&&v| v == 1).count();
        let (lo, hi) = s
            .image()
            .iter()
            .fold((1.0f32, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
        println!(
            "slice {} -> 224x192, intensities [{lo:.3}, {hi:.3}], {fg} lesion pixels",
            s.slice_index()
        );
    }
    let pack = dir.join("sub01.vcad");
    pack_dataset(&samples, &pack)?;
    let back = load_packed(&pack)?;
    println!(
        "packed {} slices to {}; reload identical: {}",
        back.len(),
        pack.display(),
        back == samples
    );
    Ok(())
}
