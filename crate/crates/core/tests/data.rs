mod common;

use std::collections::HashSet;

use common::{write_nifti_fixture, Endian, RawType};
use proptest::prelude::*;
use rand::Rng;
use vcaseg::data::{
    extract_axial_slices, load_packed, normalize, pack_dataset, preprocess_pair, read_manifest, read_nifti,
    resize_mask, split, split_indices, synth_generate, write_nifti, NiftiDatatype, PackedDataset, SliceSample,
    SplitLevel, SplitSpec, VolumeKind, SLICE_H, SLICE_W,
};
use vcaseg::mask::Mask;
use vcaseg::Error;

fn ramp(n: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..n).map(f).collect()
}

#[test]
fn reader_decodes_every_layout_from_independent_writer() {
    let dir = tempfile::tempdir().unwrap();
    let dims = (5, 4, 3);
    let n = 60;
    let raw = ramp(n, |i| (i as f64 * 7.0) % 200.0);
    for ty in [RawType::U8, RawType::I16, RawType::F32] {
        for endian in [Endian::Little, Endian::Big] {
            for gzip in [false, true] {
                let path = dir
                    .path()
                    .join(format!("{ty:?}_{endian:?}_{gzip}.nii{}", if gzip { ".gz" } else { "" }));
                write_nifti_fixture(&path, dims, &raw, ty, endian, 0.0, 0.0, gzip);
                let v = read_nifti(&path, VolumeKind::Image).unwrap();
                assert_eq!(v.dims, dims);
                let want: Vec<f32> = raw.iter().map(|&x| x as f32).collect();
                assert_eq!(v.voxels, want, "{ty:?} {endian:?} gzip={gzip}");
                assert_eq!(v.get(2, 1, 1), raw[2 + 5 * (1 + 4)] as f32);
            }
        }
    }
}

#[test]
fn scaling_is_applied_when_slope_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scaled.nii");
    let raw = ramp(8, |i| i as f64 - 3.0);
    write_nifti_fixture(&path, (2, 2, 2), &raw, RawType::I16, Endian::Big, 0.5, 10.0, false);
    let v = read_nifti(&path, VolumeKind::Image).unwrap();
    let want: Vec<f32> = raw.iter().map(|&x| (0.5 * x + 10.0) as f32).collect();
    assert_eq!(v.voxels, want);
}

#[test]
fn mask_volumes_are_snapped_or_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("m.nii");
    write_nifti_fixture(
        &ok,
        (2, 2, 1),
        &[0.0, 1.0, 0.9999, 0.0004],
        RawType::F32,
        Endian::Little,
        0.0,
        0.0,
        false,
    );
    assert_eq!(
        read_nifti(&ok, VolumeKind::Mask).unwrap().voxels,
        vec![0.0, 1.0, 1.0, 0.0]
    );
    let bad = dir.path().join("bad.nii");
    write_nifti_fixture(
        &bad,
        (2, 2, 1),
        &[0.0, 2.0, 0.0, 0.0],
        RawType::U8,
        Endian::Little,
        0.0,
        0.0,
        false,
    );
    assert!(matches!(
        read_nifti(&bad, VolumeKind::Mask),
        Err(Error::NonBinary { index: 1, .. })
    ));
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let f64_path = dir.path().join("f64.nii");
    write_nifti_fixture(
        &f64_path,
        (2, 2, 2),
        &[0.0; 8],
        RawType::F64,
        Endian::Little,
        0.0,
        0.0,
        false,
    );
    assert!(matches!(
        read_nifti(&f64_path, VolumeKind::Image),
        Err(Error::UnsupportedDatatype(64))
    ));

    let good = dir.path().join("good.nii");
    write_nifti_fixture(
        &good,
        (4, 4, 4),
        &[1.0; 64],
        RawType::I16,
        Endian::Little,
        0.0,
        0.0,
        false,
    );
    let bytes = std::fs::read(&good).unwrap();

    let mut magic = bytes.clone();
    magic[344..348].copy_from_slice(b"xyz\0");
    let p = dir.path().join("magic.nii");
    std::fs::write(&p, &magic).unwrap();
    assert!(read_nifti(&p, VolumeKind::Image).is_err());

    let p = dir.path().join("short.nii");
    std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(
        read_nifti(&p, VolumeKind::Image),
        Err(Error::Truncated { .. })
    ));

    let p = dir.path().join("header.nii");
    std::fs::write(&p, &bytes[..200]).unwrap();
    assert!(read_nifti(&p, VolumeKind::Image).is_err());

    assert!(matches!(
        read_nifti(&dir.path().join("missing.nii"), VolumeKind::Image),
        Err(Error::Io { .. })
    ));
}

#[test]
fn writer_round_trips_through_reader() {
    let dir = tempfile::tempdir().unwrap();
    let vox: Vec<f32> = (0..24).map(|i| i as f32 * 0.25).collect();
    for (name, ty) in [("a.nii", NiftiDatatype::Float32), ("b.nii.gz", NiftiDatatype::Float32)] {
        let path = dir.path().join(name);
        write_nifti(&path, (4, 3, 2), &vox, ty).unwrap();
        assert_eq!(read_nifti(&path, VolumeKind::Image).unwrap().voxels, vox);
    }
    let path = dir.path().join("c.nii");
    write_nifti(&path, (4, 3, 2), &vox, NiftiDatatype::Int16).unwrap();
    let back = read_nifti(&path, VolumeKind::Image).unwrap().voxels;
    assert!(back.iter().zip(&vox).all(|(a, b)| *a == b.round()));
}

#[test]
fn atlas_shaped_volume_slices_and_reassembles() {
    let dir = tempfile::tempdir().unwrap();
    let dims = (197, 233, 189);
    let n = dims.0 * dims.1 * dims.2;
    let mut r = common::rng(30);
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0..1200) as f64).collect();
    let mask_raw: Vec<f64> = (0..n)
        .map(|idx| {
            let (i, j, k) = (idx % dims.0, (idx / dims.0) % dims.1, idx / (dims.0 * dims.1));
            ((i as i64 - 100).pow(2) + (j as i64 - 110).pow(2) < 400 && (90..100).contains(&k)) as u8 as f64
        })
        .collect();
    let img_path = dir.path().join("sub-01_T1w.nii.gz");
    let mask_path = dir.path().join("sub-01_mask.nii.gz");
    write_nifti_fixture(&img_path, dims, &raw, RawType::I16, Endian::Little, 0.0, 0.0, true);
    write_nifti_fixture(&mask_path, dims, &mask_raw, RawType::U8, Endian::Little, 0.0, 0.0, true);

    let img = read_nifti(&img_path, VolumeKind::Image).unwrap();
    let mask = read_nifti(&mask_path, VolumeKind::Mask).unwrap();
    let slices = extract_axial_slices(&img, &mask).unwrap();
    assert_eq!(slices.len(), 189);
    assert!(slices
        .iter()
        .all(|(s, m)| (s.height(), s.width(), m.height(), m.width()) == (233, 197, 233, 197)));
    let mut rebuilt = vec![0f32; n];
    for (k, (s, _)) in slices.iter().enumerate() {
        for r in 0..233 {
            for c in 0..197 {
                rebuilt[c + 197 * (r + 233 * k)] = s.get(r, c);
            }
        }
    }
    assert_eq!(rebuilt, img.voxels);

    let samples = preprocess_pair(&img, &mask, "sub-01").unwrap();
    assert_eq!(samples.len(), 189);
    for (k, s) in samples.iter().enumerate() {
        assert_eq!((s.volume_id(), s.slice_index()), ("sub-01", k));
        assert_eq!((s.mask().height(), s.mask().width()), (SLICE_H, SLICE_W));
        assert!(s.image().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(samples[..90].iter().all(|s| s.mask().is_empty()));
    assert!(samples[90..100].iter().all(|s| !s.mask().is_empty()));
}

#[test]
fn mismatched_volumes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.nii");
    let b = dir.path().join("b.nii");
    write_nifti_fixture(&a, (4, 4, 2), &[0.0; 32], RawType::U8, Endian::Little, 0.0, 0.0, false);
    write_nifti_fixture(&b, (4, 4, 3), &[0.0; 48], RawType::U8, Endian::Little, 0.0, 0.0, false);
    let a = read_nifti(&a, VolumeKind::Image).unwrap();
    let b = read_nifti(&b, VolumeKind::Mask).unwrap();
    assert!(matches!(
        extract_axial_slices(&a, &b),
        Err(Error::VolumeMismatch { .. })
    ));
}

/// Percentile by sorting and interpolating between closest ranks, the
/// default rule of numpy.percentile.
fn oracle_percentile(values: &[f32], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[test]
fn normalization_clips_a_bright_outlier() {
    let mut r = common::rng(31);
    let mut values: Vec<f32> = (0..1000).map(|_| r.random_range(0.0..100.0)).collect();
    values[17] = 1000.0;
    let out = normalize(&values, 0.0, 99.0);
    let lo = oracle_percentile(&values, 0.0);
    let hi = oracle_percentile(&values, 99.0);
    assert!(hi < 101.0, "outlier must not set the range: {hi}");
    assert_eq!(out[17], 1.0);
    for (v, o) in values.iter().zip(&out) {
        let want = ((*v as f64).clamp(lo, hi) - lo) / (hi - lo);
        assert!((*o as f64 - want).abs() < 1e-6);
    }
    assert!(out.contains(&0.0));
}

#[test]
fn nearest_mask_resize_preserves_binary_values() {
    let mut r = common::rng(32);
    for &(h, w) in &[(233, 197), (100, 80), (10, 7), (300, 250)] {
        let m = common::random_mask(h, w, 0.3, &mut r);
        let out = resize_mask(&m, (SLICE_H, SLICE_W));
        assert!(out.data().iter().all(|&v| v == 0 || v == 1));
        for rr in (0..SLICE_H).step_by(37) {
            for cc in (0..SLICE_W).step_by(29) {
                assert_eq!(out.get(rr, cc), m.get(rr * h / SLICE_H, cc * w / SLICE_W));
            }
        }
    }
}

fn blank_sample(volume: &str, idx: usize) -> SliceSample {
    SliceSample::new(volume, idx, vec![0.0; SLICE_H * SLICE_W], Mask::empty(SLICE_H, SLICE_W)).unwrap()
}

#[test]
fn slice_level_split_is_nine_to_one() {
    let samples: Vec<SliceSample> = (0..100).map(|i| blank_sample("v", i)).collect();
    let (train, val) = split_indices(&samples, &SplitSpec::default()).unwrap();
    assert_eq!((train.len(), val.len()), (90, 10));
    let all: HashSet<usize> = train.iter().chain(&val).copied().collect();
    assert_eq!(all.len(), 100);
    assert_eq!(
        split_indices(&samples, &SplitSpec::default()).unwrap(),
        (train.clone(), val.clone())
    );
    let other = split_indices(
        &samples,
        &SplitSpec {
            seed: 1,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    assert_ne!(other.1, val);
}

#[test]
fn volume_level_split_has_no_leakage() {
    for seed in 0..20 {
        let samples: Vec<SliceSample> = (0..229)
            .flat_map(|v| (0..3).map(move |k| blank_sample(&format!("vol{v:03}"), k)))
            .collect();
        let spec = SplitSpec {
            level: SplitLevel::Volume,
            seed,
            ..SplitSpec::default()
        };
        let (train, val) = split(samples, &spec).unwrap();
        let tv: HashSet<&str> = train.iter().map(|s| s.volume_id()).collect();
        let vv: HashSet<&str> = val.iter().map(|s| s.volume_id()).collect();
        assert!(tv.is_disjoint(&vv));
        assert_eq!(vv.len(), 23);
        assert_eq!(train.len() + val.len(), 687);
    }
}

#[test]
fn split_rejects_tiny_inputs_and_bad_fractions() {
    let few: Vec<SliceSample> = (0..5).map(|i| blank_sample("v", i)).collect();
    assert!(split_indices(&few, &SplitSpec::default()).is_err());
    let many: Vec<SliceSample> = (0..50).map(|i| blank_sample("v", i)).collect();
    assert!(split_indices(
        &many,
        &SplitSpec {
            level: SplitLevel::Volume,
            ..SplitSpec::default()
        }
    )
    .is_err());
    assert!(split_indices(
        &many,
        &SplitSpec {
            val_fraction: 1.0,
            ..SplitSpec::default()
        }
    )
    .is_err());
}

#[test]
fn synthetic_data_is_deterministic_and_prefix_stable() {
    let a = synth_generate(12, 0.5, 3).unwrap();
    let b = synth_generate(12, 0.5, 3).unwrap();
    let c = synth_generate(5, 0.5, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(&a[..5], &c[..]);
    assert_ne!(a, synth_generate(12, 0.5, 4).unwrap());
    for (i, s) in a.iter().enumerate() {
        assert_eq!(s.volume_id(), format!("synth{:03}", i / 8));
        assert_eq!(s.slice_index(), i % 8);
    }
    let lesions = synth_generate(6, 1.0, 0).unwrap();
    assert!(lesions.iter().all(|s| !s.mask().is_empty()));
    for s in &lesions {
        let (mut inside, mut outside, mut ni, mut no) = (0.0, 0.0, 0, 0);
        for (v, m) in s.image().iter().zip(s.mask().data()) {
            if *m == 1 {
                inside += *v as f64;
                ni += 1;
            } else {
                outside += *v as f64;
                no += 1;
            }
        }
        assert!(
            inside / (ni as f64) < 0.6 * outside / no as f64,
            "lesions are darker than tissue"
        );
    }
    assert!(synth_generate(6, 0.0, 0).unwrap().iter().all(|s| s.mask().is_empty()));
}

#[test]
fn pack_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_generate(10, 0.7, 8).unwrap();
    let path = dir.path().join("d.vcad");
    pack_dataset(&samples, &path).unwrap();
    assert_eq!(load_packed(&path).unwrap(), samples);
    let ds = PackedDataset::open(&path).unwrap();
    assert_eq!(ds.len(), 10);
    assert_eq!(ds.id(9), ("synth001", 1));
    assert_eq!(ds.get(3).unwrap(), samples[3]);
    assert!(ds.get(10).is_err());

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.vcad");
    std::fs::write(&cut, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(PackedDataset::open(&cut), Err(Error::Truncated { .. })));
    let extra = dir.path().join("extra.vcad");
    let mut longer = bytes.clone();
    longer.extend_from_slice(&[0; 3]);
    std::fs::write(&extra, &longer).unwrap();
    assert!(matches!(PackedDataset::open(&extra), Err(Error::Malformed { .. })));
    let magic = dir.path().join("magic.vcad");
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    std::fs::write(&magic, &wrong).unwrap();
    assert!(matches!(PackedDataset::open(&magic), Err(Error::BadMagic { .. })));
    let version = dir.path().join("version.vcad");
    let mut v2 = bytes;
    v2[4] = 2;
    std::fs::write(&version, &v2).unwrap();
    assert!(matches!(
        PackedDataset::open(&version),
        Err(Error::UnsupportedVersion(2))
    ));
}

/// A full-size cache (the slice count of the public release) opened from a
/// sparse file: only ids are read, so this costs no image memory.
#[test]
fn packed_index_streams_over_full_size_cache() {
    const N: u64 = 43_281;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.vcad");
    let entry = 2 + 4 + (SLICE_H * SLICE_W * 5) as u64;
    let mut header = Vec::new();
    header.extend_from_slice(b"VCAD");
    header.extend_from_slice(&1u32.to_le_bytes());
    header.extend_from_slice(&(N as u32).to_le_bytes());
    std::fs::write(&path, &header).unwrap();
    let f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
    f.set_len(12 + N * entry).unwrap();
    drop(f);
    let ds = PackedDataset::open(&path).unwrap();
    assert_eq!(ds.len(), N as usize);
    let last = ds.get(N as usize - 1).unwrap();
    assert!(last.mask().is_empty() && last.image().iter().all(|&v| v == 0.0));
}

#[test]
fn manifest_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.tsv");
    std::fs::write(
        &path,
        "# comment\nsub-1.nii.gz\tsub-1_mask.nii.gz\n\n/abs/a.nii\t/abs/b.nii\n",
    )
    .unwrap();
    let pairs = read_manifest(&path).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].image, dir.path().join("sub-1.nii.gz"));
    assert_eq!(pairs[0].volume_id(), "sub-1");
    assert_eq!(pairs[1].mask, std::path::PathBuf::from("/abs/b.nii"));
    std::fs::write(&path, "only-one-column\n").unwrap();
    assert!(matches!(read_manifest(&path), Err(Error::Malformed { .. })));
}

#[test]
fn sample_invariants_are_enforced() {
    let mask = Mask::empty(SLICE_H, SLICE_W);
    assert!(SliceSample::new("v", 0, vec![0.0; 10], mask.clone()).is_err());
    let mut img = vec![0.5; SLICE_H * SLICE_W];
    img[5] = 1.5;
    assert!(SliceSample::new("v", 0, img, mask).is_err());
    assert!(SliceSample::new("v", 0, vec![0.5; SLICE_H * SLICE_W], Mask::empty(10, 10)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_output_is_in_unit_interval(values in prop::collection::vec(-1e4f32..1e4, 1..200)) {
        let out = normalize(&values, 0.0, 99.0);
        prop_assert_eq!(out.len(), values.len());
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
