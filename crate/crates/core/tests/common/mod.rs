//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vcaseg::graph::{Tape, Var};
use vcaseg::losses::{combined_loss, LossConfig};
use vcaseg::mask::Mask;
use vcaseg::model::{ModelConfig, VcaNet};
use vcaseg::tensor::{Activation, BnMode, ConvSpec, PoolKind, PoolSpec, RunningStats, Shape, Tensor, UpsampleKind};

pub const FD_STEP: f64 = 1e-5;
pub const FD_COORDS: usize = 10;
pub const FD_MAX_REL: f64 = 1e-4;
/// Denominator floor for relative error, so that coordinates whose true
/// gradient is zero (conv biases ahead of train-mode batch norm) are judged
/// on absolute error. Round-off in the differenced loss is around 1e-11.
pub const FD_REL_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Normal samples pushed at least `margin` away from zero.
pub fn randn_away_from_zero(shape: Shape, margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| loop {
        let v: f64 = rng.sample(StandardNormal);
        if v.abs() > margin {
            break v;
        }
    })
}

/// Distinct values on a 0.01 grid, shuffled, so max-pool windows have no
/// near-ties within the finite-difference step.
pub fn distinct(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let mut v: Vec<f64> = (0..shape.numel()).map(|i| i as f64 * 0.01 - 1.0).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_REL_FLOOR)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central-difference check of a tape computation. The scalar objective is
/// `sum(upstream * output)` for a fixed random `upstream`; `FD_COORDS`
/// random coordinates of every input are perturbed by `±FD_STEP`.
/// Returns the largest relative error.
pub fn check_op(inputs: &[Tensor<f64>], seed: u64, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut r = rng(seed);
    let eval = |xs: &[Tensor<f64>]| -> (Tape<f64>, Var, Vec<Var>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &vars);
        (tape, out, vars)
    };
    let (tape, out, vars) = eval(inputs);
    let upstream = randn(tape.value(out).shape(), &mut r);
    let grads = tape.backward(out, upstream.clone()).unwrap();

    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("leaf gradient").clone();
        for _ in 0..FD_COORDS {
            let i = r.random_range(0..x.len());
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let (tp, op, _) = eval(&plus);
            let (tm, om, _) = eval(&minus);
            let numeric = (dot(tp.value(op), &upstream) - dot(tm.value(om), &upstream)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Named finite-difference cases covering every differentiable op, the
/// combined loss and the reduced network.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng(2024);

    let conv_case = |name: &'static str, spec: ConvSpec, hw: (usize, usize), r: &mut ChaCha8Rng| {
        let x = randn(Shape::new(2, spec.in_channels, hw.0, hw.1), r);
        let w = randn(spec.weight_shape(), r);
        let b = randn(Shape::new(spec.out_channels, 1, 1, 1), r);
        (
            name,
            check_op(&[x, w, b], 1, move |t, v| {
                t.conv2d(v[0], v[1], Some(v[2]), spec).unwrap()
            }),
        )
    };
    out.push(conv_case("conv k3 s1 p1", ConvSpec::new(3, 4, 3), (6, 5), &mut r));
    out.push(conv_case(
        "conv k5 s2 p2",
        ConvSpec::new(2, 3, 5).stride(2).padding(2),
        (8, 6),
        &mut r,
    ));
    out.push(conv_case(
        "conv k3 d2 p2",
        ConvSpec::new(2, 3, 3).padding(2).dilation(2),
        (6, 6),
        &mut r,
    ));
    out.push(conv_case("conv k1", ConvSpec::new(4, 2, 1), (3, 4), &mut r));

    let shape = Shape::new(3, 4, 5, 4);
    let x = randn(shape, &mut r);
    let g = uniform(Shape::new(4, 1, 1, 1), 0.5, 1.5, &mut r);
    let b = randn(Shape::new(4, 1, 1, 1), &mut r);
    out.push((
        "batch norm (train)",
        check_op(&[x.clone(), g.clone(), b.clone()], 2, |t, v| {
            t.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0
        }),
    ));
    let running = RunningStats {
        mean: (0..4).map(|_| r.random_range(-0.5..0.5)).collect(),
        var: (0..4).map(|_| r.random_range(0.5..2.0)).collect(),
    };
    out.push((
        "batch norm (eval)",
        check_op(&[x, g, b], 3, move |t, v| {
            t.batch_norm_eval(v[0], v[1], v[2], running.clone(), 1e-5).unwrap()
        }),
    ));

    let xa = randn_away_from_zero(Shape::new(2, 3, 4, 5), 1e-3, &mut r);
    out.push((
        "leaky relu",
        check_op(std::slice::from_ref(&xa), 4, |t, v| {
            t.activation(v[0], Activation::LeakyRelu(0.01))
        }),
    ));
    out.push((
        "sigmoid",
        check_op(&[xa], 5, |t, v| t.activation(v[0], Activation::Sigmoid)),
    ));

    let xp = distinct(Shape::new(2, 2, 6, 4), &mut r);
    out.push((
        "max pool 2x2",
        check_op(std::slice::from_ref(&xp), 6, |t, v| {
            t.pool2d(v[0], PoolSpec::halve(PoolKind::Max)).unwrap()
        }),
    ));
    out.push((
        "max pool 3x3 same",
        check_op(std::slice::from_ref(&xp), 7, |t, v| {
            t.pool2d(v[0], PoolSpec::same3(PoolKind::Max)).unwrap()
        }),
    ));
    out.push((
        "avg pool 2x2",
        check_op(&[xp], 8, |t, v| t.pool2d(v[0], PoolSpec::halve(PoolKind::Avg)).unwrap()),
    ));

    let xu = randn(Shape::new(2, 2, 3, 4), &mut r);
    out.push((
        "upsample nearest",
        check_op(std::slice::from_ref(&xu), 9, |t, v| {
            t.upsample2(v[0], UpsampleKind::Nearest)
        }),
    ));
    out.push((
        "upsample bilinear",
        check_op(&[xu], 10, |t, v| t.upsample2(v[0], UpsampleKind::Bilinear)),
    ));

    let c1 = randn(Shape::new(2, 2, 3, 3), &mut r);
    let c2 = randn(Shape::new(2, 3, 3, 3), &mut r);
    out.push((
        "concat",
        check_op(&[c1, c2], 11, |t, v| t.concat(&[v[0], v[1]]).unwrap()),
    ));
    let a1 = randn(Shape::new(2, 3, 3, 2), &mut r);
    let a2 = randn(Shape::new(2, 3, 3, 2), &mut r);
    let a3 = randn(Shape::new(2, 3, 3, 2), &mut r);
    out.push((
        "add",
        check_op(&[a1, a2, a3], 12, |t, v| t.add(&[v[0], v[1], v[2]]).unwrap()),
    ));

    out.push(("combined loss", loss_gradient_check(13)));
    out.push(("reduced model end-to-end", model_gradient_check(14)));
    out
}

/// Gradient of the total loss w.r.t. a random 4x4 probability map.
pub fn loss_gradient_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = LossConfig::default();
    let shape = Shape::new(1, 1, 4, 4);
    let p = uniform(shape, 0.05, 0.95, &mut r);
    let y = Tensor::from_fn(shape, |_, _, _, _| if r.random_bool(0.4) { 1.0 } else { 0.0 });
    let (_, grad) = combined_loss(&p, &y, &cfg).unwrap();
    let total = |p: &Tensor<f64>| combined_loss(p, &y, &cfg).unwrap().0.total;
    let mut worst = 0.0f64;
    for _ in 0..FD_COORDS {
        let i = r.random_range(0..p.len());
        let mut plus = p.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = p.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (total(&plus) - total(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grad.data()[i], numeric));
    }
    worst
}

/// Loss gradient w.r.t. weights of the reduced network (train-mode batch
/// norm, batch of 2), `FD_COORDS` coordinates in each stage group.
pub fn model_gradient_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = LossConfig::default();
    let mut net = VcaNet::<f64>::build(ModelConfig::reduced().with_seed(seed)).unwrap();
    let (h, w) = net.config().input_hw;
    let shape = Shape::new(2, 1, h, w);
    let x = uniform(shape, 0.0, 1.0, &mut r);
    let y = Tensor::from_fn(shape, |_, _, i, j| {
        if (4..10).contains(&i) && (5..12).contains(&j) {
            1.0
        } else {
            0.0
        }
    });

    let total = |net: &VcaNet<f64>| {
        let pass = net.forward(&x, BnMode::Train).unwrap();
        combined_loss(pass.prob_map(), &y, &cfg).unwrap().0.total
    };
    let pass = net.forward(&x, BnMode::Train).unwrap();
    let (_, grad) = combined_loss(pass.prob_map(), &y, &cfg).unwrap();
    net.zero_grad();
    net.backward(&pass, grad).unwrap();

    let mut worst = 0.0f64;
    for group in ["v1.", "v2.", "v4.", "it.", "dec.", "head."] {
        let ids: Vec<usize> = (0..net.params().len())
            .filter(|&i| {
                let p = net.params().get(i);
                p.kind == vcaseg::model::ParamKind::Weight && p.name.starts_with(group)
            })
            .collect();
        assert!(!ids.is_empty(), "no parameters under {group}");
        for _ in 0..FD_COORDS {
            let id = ids[r.random_range(0..ids.len())];
            let i = r.random_range(0..net.params().get(id).value.len());
            let analytic = net.params().get(id).grad.data()[i];
            let orig = net.params().get(id).value.data()[i];
            // A leaky-relu input within `h` of zero bends the difference
            // quotient; a correct gradient agrees at one of two step sizes.
            let mut best = f64::INFINITY;
            for h in [FD_STEP, FD_STEP / 10.0] {
                net.params_mut().get_mut(id).value.data_mut()[i] = orig + h;
                let lp = total(&net);
                net.params_mut().get_mut(id).value.data_mut()[i] = orig - h;
                let lm = total(&net);
                net.params_mut().get_mut(id).value.data_mut()[i] = orig;
                best = best.min(rel_err(analytic, (lp - lm) / (2.0 * h)));
            }
            worst = worst.max(best);
        }
    }
    worst
}

/// Pixel-loop confusion counts `(tp, fp, tn, fn)`.
pub fn naive_counts(pred: &[u8], truth: &[u8]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        if pred[i] == 1 && truth[i] == 1 {
            tp += 1;
        } else if pred[i] == 1 {
            fp += 1;
        } else if truth[i] == 1 {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    (tp, fp, tn, fn_)
}

/// Ratio oracle: `None` on a zero denominator.
pub fn naive_ratio(num: f64, den: f64) -> Option<f64> {
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// All-pairs Hausdorff distance with per-pair Euclidean distances.
pub fn brute_hausdorff(a: &[(i64, i64)], b: &[(i64, i64)]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let directed = |x: &[(i64, i64)], y: &[(i64, i64)]| {
        let mut sup = 0.0f64;
        for p in x {
            let mut inf = f64::INFINITY;
            for q in y {
                let d = (((p.0 - q.0) * (p.0 - q.0) + (p.1 - q.1) * (p.1 - q.1)) as f64).sqrt();
                inf = inf.min(d);
            }
            sup = sup.max(inf);
        }
        sup
    };
    Some(directed(a, b).max(directed(b, a)))
}

pub fn random_mask(h: usize, w: usize, density: f64, rng: &mut ChaCha8Rng) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.random_bool(density))
}

#[derive(Clone, Copy, Debug)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Clone, Copy, Debug)]
pub enum RawType {
    U8,
    I16,
    F32,
    F64,
}

#[allow(clippy::too_many_arguments)]
/// Standalone NIfTI-1 writer used as the reference for the reader: header
/// fields are laid out by byte offset from the format definition.
pub fn write_nifti_fixture(
    path: &Path,
    dims: (usize, usize, usize),
    raw: &[f64],
    ty: RawType,
    endian: Endian,
    slope: f32,
    inter: f32,
    gzip: bool,
) {
    let put16 = |buf: &mut Vec<u8>, at: usize, v: i16| {
        let b = match endian {
            Endian::Little => v.to_le_bytes(),
            Endian::Big => v.to_be_bytes(),
        };
        buf[at..at + 2].copy_from_slice(&b);
    };
    let put32f = |buf: &mut Vec<u8>, at: usize, v: f32| {
        let b = match endian {
            Endian::Little => v.to_le_bytes(),
            Endian::Big => v.to_be_bytes(),
        };
        buf[at..at + 4].copy_from_slice(&b);
    };
    let mut buf = vec![0u8; 352];
    let size = match endian {
        Endian::Little => 348i32.to_le_bytes(),
        Endian::Big => 348i32.to_be_bytes(),
    };
    buf[0..4].copy_from_slice(&size);
    for (i, d) in [3, dims.0 as i16, dims.1 as i16, dims.2 as i16, 1, 1, 1, 1]
        .into_iter()
        .enumerate()
    {
        put16(&mut buf, 40 + 2 * i, d);
    }
    let (code, bits) = match ty {
        RawType::U8 => (2, 8),
        RawType::I16 => (4, 16),
        RawType::F32 => (16, 32),
        RawType::F64 => (64, 64),
    };
    put16(&mut buf, 70, code);
    put16(&mut buf, 72, bits);
    for i in 0..8 {
        put32f(&mut buf, 76 + 4 * i, 1.0);
    }
    put32f(&mut buf, 108, 352.0);
    put32f(&mut buf, 112, slope);
    put32f(&mut buf, 116, inter);
    buf[344..348].copy_from_slice(b"n+1\0");
    for &v in raw {
        match (ty, endian) {
            (RawType::U8, _) => buf.push(v as u8),
            (RawType::I16, Endian::Little) => buf.extend_from_slice(&(v as i16).to_le_bytes()),
            (RawType::I16, Endian::Big) => buf.extend_from_slice(&(v as i16).to_be_bytes()),
            (RawType::F32, Endian::Little) => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            (RawType::F32, Endian::Big) => buf.extend_from_slice(&(v as f32).to_be_bytes()),
            (RawType::F64, Endian::Little) => buf.extend_from_slice(&v.to_le_bytes()),
            (RawType::F64, Endian::Big) => buf.extend_from_slice(&v.to_be_bytes()),
        }
    }
    let bytes = if gzip {
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&buf).unwrap();
        enc.finish().unwrap()
    } else {
        buf
    };
    std::fs::write(path, bytes).unwrap();
}

/// Narrow network at 56x48 used by the training suites.
pub fn tiny_model(seed: u64) -> ModelConfig {
    ModelConfig::small().with_input_hw(56, 48).with_seed(seed)
}

pub fn tiny_train_config(epochs: usize, seed: u64) -> vcaseg::trainer::TrainConfig {
    vcaseg::trainer::TrainConfig {
        epochs,
        seed,
        patience: 0,
        include_empty_slices: true,
        ..Default::default()
    }
}

/// Trains from scratch into `dir` and returns the bytes of every epoch's
/// weight checkpoint.
pub fn checkpoint_bytes_of_run(
    samples: &[vcaseg::data::SliceSample],
    val: &[vcaseg::data::SliceSample],
    epochs: usize,
    dir: &Path,
) -> Vec<Vec<u8>> {
    let net = VcaNet::<f32>::build(tiny_model(1)).unwrap();
    vcaseg::trainer::train(net, samples, val, &tiny_train_config(epochs, 5), Some(dir)).unwrap();
    (1..=epochs)
        .map(|e| std::fs::read(vcaseg::trainer::checkpoint_path(dir, e)).unwrap())
        .collect()
}

/// Resumes the run in `dir` after `from` epochs, continuing to `epochs`,
/// and returns the final checkpoint bytes.
pub fn resumed_final_bytes(
    samples: &[vcaseg::data::SliceSample],
    val: &[vcaseg::data::SliceSample],
    from: usize,
    epochs: usize,
    dir: &Path,
) -> Vec<u8> {
    let mut t = vcaseg::trainer::Trainer::resume(dir, from, tiny_train_config(epochs, 5)).unwrap();
    t.fit(samples, val).unwrap();
    std::fs::read(vcaseg::trainer::checkpoint_path(dir, epochs)).unwrap()
}

/// Copies the first `upto` epochs of a run directory.
pub fn copy_run_prefix(src: &Path, dst: &Path, upto: usize) {
    std::fs::create_dir_all(dst).unwrap();
    for e in 1..=upto {
        for p in [
            vcaseg::trainer::checkpoint_path(src, e),
            vcaseg::trainer::optimizer_path(src, e),
        ] {
            std::fs::copy(&p, dst.join(p.file_name().unwrap())).unwrap();
        }
    }
    std::fs::copy(src.join("history.csv"), dst.join("history.csv")).unwrap();
}

/// Parses a per-slice metrics CSV and recomputes every ratio column from the
/// `tp,fp,tn,fn` columns. Returns the number of rows checked.
pub fn check_csv_against_counts(csv: &str) -> Result<usize, String> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or("empty csv")?;
    if header != "volume_id,slice_index,dsc,iou,hd,sensitivity,precision,f1,tp,fp,tn,fn" {
        return Err(format!("unexpected header {header}"));
    }
    let mut n = 0;
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(format!("row {i}: {} columns", cols.len()));
        }
        let count = |k: usize| {
            cols[k]
                .parse::<f64>()
                .map_err(|_| format!("row {i}: bad count {}", cols[k]))
        };
        let (tp, fp, _tn, fn_) = (count(8)?, count(9)?, count(10)?, count(11)?);
        let expected = [
            (2, "dsc", naive_ratio(2.0 * tp, 2.0 * tp + fp + fn_)),
            (3, "iou", naive_ratio(tp, tp + fp + fn_)),
            (5, "sensitivity", naive_ratio(tp, tp + fn_)),
            (6, "precision", naive_ratio(tp, tp + fp)),
            (7, "f1", naive_ratio(tp, tp + 0.5 * (fp + fn_))),
        ];
        for (k, name, want) in expected {
            match (cols[k], want) {
                ("", None) => {}
                (s, Some(w)) if !s.is_empty() => {
                    let got: f64 = s.parse().map_err(|_| format!("row {i}: bad {name} {s}"))?;
                    if (got - w).abs() > 5e-7 {
                        return Err(format!("row {i}: {name} {got} but counts give {w}"));
                    }
                }
                (s, w) => return Err(format!("row {i}: {name} field {s:?} vs expected {w:?}")),
            }
        }
        // HD is undefined exactly when one of the masks is empty.
        let pred_empty = tp + fp == 0.0;
        let truth_empty = tp + fn_ == 0.0;
        if cols[4].is_empty() != (pred_empty || truth_empty) {
            return Err(format!("row {i}: hd definedness disagrees with counts"));
        }
        n += 1;
    }
    Ok(n)
}

/// Renders overlays for `n` random pairs, writes and re-reads each as PNG and
/// compares the decoded class histogram with the confusion counts.
pub fn check_overlay_histograms(n: usize, seed: u64, dir: &Path) -> Result<(), String> {
    use vcaseg::cli::{overlay_counts, render_overlay, save_rgb};
    let mut r = rng(seed);
    for k in 0..n {
        let (h, w) = (r.random_range(8..64), r.random_range(8..64));
        let pred = random_mask(h, w, r.random_range(0.0..0.5), &mut r);
        let truth = random_mask(h, w, r.random_range(0.0..0.5), &mut r);
        let image: Vec<f32> = (0..h * w).map(|_| r.random_range(0.0..=1.0)).collect();
        let img = render_overlay(&image, &pred, &truth).map_err(|e| e.to_string())?;
        let path = dir.join(format!("overlay_{k}.png"));
        save_rgb(&img, &path).map_err(|e| e.to_string())?;
        let decoded = image::open(&path).map_err(|e| e.to_string())?.to_rgb8();
        let got = overlay_counts(&decoded);
        let (tp, fp, tn, fn_) = naive_counts(pred.data(), truth.data());
        let want = vcaseg::metrics::ConfusionCounts { tp, fp, tn, fn_ };
        if got != want {
            return Err(format!("pair {k}: overlay {got:?} vs counts {want:?}"));
        }
    }
    Ok(())
}
