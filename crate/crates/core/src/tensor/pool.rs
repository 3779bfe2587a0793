use crate::error::{Error, Result};

use super::{cast, check_same, Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    /// The 2x2, stride 2 downsampling pool.
    pub fn halve(kind: PoolKind) -> Self {
        PoolSpec {
            kind,
            kernel: 2,
            stride: 2,
            padding: 0,
        }
    }

    /// Size-preserving 3x3 pool (stride 1, padding 1) used inside inception branches.
    pub fn same3(kind: PoolKind) -> Self {
        PoolSpec {
            kind,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    /// Output size; windows must tile the padded input exactly.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |size: usize, name: &str| -> Result<usize> {
            let padded = size + 2 * self.padding;
            if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
                return Err(Error::invalid(
                    "pool2d",
                    format!("{name}={size} too small for kernel {}", self.kernel),
                ));
            }
            if !(padded - self.kernel).is_multiple_of(self.stride) {
                return Err(Error::invalid(
                    "pool2d",
                    format!(
                        "{name}={size} is not tiled by kernel {} stride {} (odd spatial size?)",
                        self.kernel, self.stride
                    ),
                ));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((axis(h, "H")?, axis(w, "W")?))
    }
}

/// Pool result; `argmax` holds, for max pooling, the flat in-plane index
/// of the selected input for every output element.
#[derive(Clone, Debug)]
pub struct PoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Option<Vec<u32>>,
}

pub fn pool2d<T: Scalar>(x: &Tensor<T>, spec: PoolSpec) -> Result<PoolOutput<T>> {
    let s = x.shape();
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let out_shape = s.with_hw(oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = (spec.kind == PoolKind::Max).then(|| Vec::with_capacity(out_shape.numel()));
    let area: T = cast((spec.kernel * spec.kernel) as f64);
    let pad = spec.padding as isize;
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            for i in 0..oh {
                for j in 0..ow {
                    let top = (i * spec.stride) as isize - pad;
                    let left = (j * spec.stride) as isize - pad;
                    let mut best = T::neg_infinity();
                    let mut best_idx = u32::MAX;
                    let mut sum = T::zero();
                    for di in 0..spec.kernel as isize {
                        let r = top + di;
                        if r < 0 || r >= s.h as isize {
                            continue;
                        }
                        for dj in 0..spec.kernel as isize {
                            let col = left + dj;
                            if col < 0 || col >= s.w as isize {
                                continue;
                            }
                            let idx = r as usize * s.w + col as usize;
                            let v = plane[idx];
                            // strict: ties keep the first index in row-major order
                            if v > best || best_idx == u32::MAX {
                                best = v;
                                best_idx = idx as u32;
                            }
                            sum += v;
                        }
                    }
                    out.data_mut()[o] = match spec.kind {
                        PoolKind::Max => best,
                        PoolKind::Avg => sum / area,
                    };
                    if let Some(a) = argmax.as_mut() {
                        a.push(best_idx);
                    }
                    o += 1;
                }
            }
        }
    }
    Ok(PoolOutput { output: out, argmax })
}

pub fn pool2d_backward<T: Scalar>(
    input_shape: Shape,
    spec: PoolSpec,
    argmax: Option<&[u32]>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = input_shape;
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    check_same(s.with_hw(oh, ow), grad_out.shape(), "pool2d_backward")?;
    let mut gx = Tensor::zeros(s);
    let plane = s.plane();
    let out_plane = oh * ow;
    match spec.kind {
        PoolKind::Max => {
            let argmax =
                argmax.ok_or_else(|| Error::invalid("pool2d_backward", "max pooling needs recorded argmax"))?;
            for (nc, (g_chunk, a_chunk)) in grad_out
                .data()
                .chunks(out_plane)
                .zip(argmax.chunks(out_plane))
                .enumerate()
            {
                let dst = &mut gx.data_mut()[nc * plane..(nc + 1) * plane];
                for (&g, &a) in g_chunk.iter().zip(a_chunk) {
                    dst[a as usize] += g;
                }
            }
        }
        PoolKind::Avg => {
            let area: T = cast((spec.kernel * spec.kernel) as f64);
            let pad = spec.padding as isize;
            for (nc, g_chunk) in grad_out.data().chunks(out_plane).enumerate() {
                let dst = &mut gx.data_mut()[nc * plane..(nc + 1) * plane];
                for i in 0..oh {
                    for j in 0..ow {
                        let g = g_chunk[i * ow + j] / area;
                        let top = (i * spec.stride) as isize - pad;
                        let left = (j * spec.stride) as isize - pad;
                        for di in 0..spec.kernel as isize {
                            let r = top + di;
                            if r < 0 || r >= s.h as isize {
                                continue;
                            }
                            for dj in 0..spec.kernel as isize {
                                let col = left + dj;
                                if col >= 0 && col < s.w as isize {
                                    dst[r as usize * s.w + col as usize] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpsampleKind {
    #[default]
    Nearest,
    Bilinear,
}

/// Two-tap linear interpolation table (half-pixel centres, i.e.
/// `align_corners = false`): output `o` reads `(1-l)*in[i0] + l*in[i1]`.
pub(crate) fn linear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let l = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, l)
        })
        .collect()
}

/// Doubles both spatial dimensions.
pub fn upsample2<T: Scalar>(x: &Tensor<T>, kind: UpsampleKind) -> Tensor<T> {
    let s = x.shape();
    let (oh, ow) = (2 * s.h, 2 * s.w);
    let mut out = Tensor::zeros(s.with_hw(oh, ow));
    let out_plane = oh * ow;
    match kind {
        UpsampleKind::Nearest => {
            for nc in 0..s.n * s.c {
                let src = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
                let dst = &mut out.data_mut()[nc * out_plane..(nc + 1) * out_plane];
                for i in 0..oh {
                    for j in 0..ow {
                        dst[i * ow + j] = src[(i / 2) * s.w + j / 2];
                    }
                }
            }
        }
        UpsampleKind::Bilinear => {
            let rows = linear_taps(s.h, oh);
            let cols = linear_taps(s.w, ow);
            for nc in 0..s.n * s.c {
                let src = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
                let dst = &mut out.data_mut()[nc * out_plane..(nc + 1) * out_plane];
                for (i, &(r0, r1, lr)) in rows.iter().enumerate() {
                    for (j, &(c0, c1, lc)) in cols.iter().enumerate() {
                        let top = (1.0 - lc) * src[r0 * s.w + c0].as_f64() + lc * src[r0 * s.w + c1].as_f64();
                        let bot = (1.0 - lc) * src[r1 * s.w + c0].as_f64() + lc * src[r1 * s.w + c1].as_f64();
                        dst[i * ow + j] = cast((1.0 - lr) * top + lr * bot);
                    }
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(
    input_shape: Shape,
    kind: UpsampleKind,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = input_shape;
    let (oh, ow) = (2 * s.h, 2 * s.w);
    check_same(s.with_hw(oh, ow), grad_out.shape(), "upsample2_backward")?;
    let mut gx = Tensor::zeros(s);
    let out_plane = oh * ow;
    match kind {
        UpsampleKind::Nearest => {
            for nc in 0..s.n * s.c {
                let g = &grad_out.data()[nc * out_plane..(nc + 1) * out_plane];
                let dst = &mut gx.data_mut()[nc * s.plane()..(nc + 1) * s.plane()];
                for i in 0..oh {
                    for j in 0..ow {
                        dst[(i / 2) * s.w + j / 2] += g[i * ow + j];
                    }
                }
            }
        }
        UpsampleKind::Bilinear => {
            let rows = linear_taps(s.h, oh);
            let cols = linear_taps(s.w, ow);
            for nc in 0..s.n * s.c {
                let g = &grad_out.data()[nc * out_plane..(nc + 1) * out_plane];
                let dst = &mut gx.data_mut()[nc * s.plane()..(nc + 1) * s.plane()];
                for (i, &(r0, r1, lr)) in rows.iter().enumerate() {
                    for (j, &(c0, c1, lc)) in cols.iter().enumerate() {
                        let v = g[i * ow + j].as_f64();
                        dst[r0 * s.w + c0] += cast(v * (1.0 - lr) * (1.0 - lc));
                        dst[r0 * s.w + c1] += cast(v * (1.0 - lr) * lc);
                        dst[r1 * s.w + c0] += cast(v * lr * (1.0 - lc));
                        dst[r1 * s.w + c1] += cast(v * lr * lc);
                    }
                }
            }
        }
    }
    Ok(gx)
}
