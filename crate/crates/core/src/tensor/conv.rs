use crate::error::{Error, Result};

use super::{Scalar, Shape, Tensor};

/// Geometry of one 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvSpec {
    /// Square kernel, stride 1, "same" padding `d*(k-1)/2`.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: ((kernel - 1) / 2, (kernel - 1) / 2),
            dilation: (1, 1),
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    /// `floor((size + 2p - d(k-1) - 1) / s) + 1` per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |size: usize, k: usize, s: usize, p: usize, d: usize, name: &'static str| -> Result<usize> {
            if k == 0 || s == 0 || d == 0 {
                return Err(Error::invalid(
                    "conv2d",
                    format!("zero kernel/stride/dilation on {name}"),
                ));
            }
            let span = d * (k - 1) + 1;
            let padded = size + 2 * p;
            if padded < span {
                return Err(Error::invalid(
                    "conv2d",
                    format!("input {name}={size} with padding {p} is smaller than dilated kernel extent {span}"),
                ));
            }
            Ok((padded - span) / s + 1)
        };
        Ok((
            axis(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0, "H")?,
            axis(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1, "W")?,
        ))
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn validate(&self, x: Shape, w: Shape, b: Option<Shape>) -> Result<(usize, usize)> {
        if x.c != self.in_channels {
            return Err(Error::shape("conv2d", "input channels", self.in_channels, x.c));
        }
        let ws = self.weight_shape();
        for (axis, e, g) in [
            ("weight out_channels", ws.n, w.n),
            ("weight in_channels", ws.c, w.c),
            ("weight kernel height", ws.h, w.h),
            ("weight kernel width", ws.w, w.w),
        ] {
            if e != g {
                return Err(Error::shape("conv2d", axis, e, g));
            }
        }
        if let Some(b) = b {
            if b.numel() != self.out_channels {
                return Err(Error::shape("conv2d", "bias length", self.out_channels, b.numel()));
            }
        }
        self.output_hw(x.h, x.w)
    }
}

/// Bound on the im2col scratch buffer (elements) so large inputs are
/// processed in column chunks.
const COL_BUDGET: usize = 1 << 20;

fn chunk_len(patch: usize, positions: usize) -> usize {
    (COL_BUDGET / patch.max(1)).clamp(1, positions.max(1))
}

/// Fill `cols[K, len]` with the receptive fields of output positions `p0..p0+len`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    in_h: usize,
    in_w: usize,
    spec: &ConvSpec,
    out_w: usize,
    p0: usize,
    len: usize,
    cols: &mut [T],
) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let plane = in_h * in_w;
    let mut row = 0;
    for ci in 0..spec.in_channels {
        let xc = &x[ci * plane..(ci + 1) * plane];
        for i in 0..kh {
            for j in 0..kw {
                let dst = &mut cols[row * len..(row + 1) * len];
                for (q, d) in dst.iter_mut().enumerate() {
                    let p = p0 + q;
                    let (oh, ow) = (p / out_w, p % out_w);
                    let ih = (oh * sh + i * dh) as isize - ph as isize;
                    let iw = (ow * sw + j * dw) as isize - pw as isize;
                    *d = if ih >= 0 && iw >= 0 && (ih as usize) < in_h && (iw as usize) < in_w {
                        xc[ih as usize * in_w + iw as usize]
                    } else {
                        T::zero()
                    };
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add `cols[K, len]` back onto the input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    in_h: usize,
    in_w: usize,
    spec: &ConvSpec,
    out_w: usize,
    p0: usize,
    len: usize,
    gx: &mut [T],
) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let plane = in_h * in_w;
    let mut row = 0;
    for ci in 0..spec.in_channels {
        let gxc = &mut gx[ci * plane..(ci + 1) * plane];
        for i in 0..kh {
            for j in 0..kw {
                let src = &cols[row * len..(row + 1) * len];
                for (q, &v) in src.iter().enumerate() {
                    let p = p0 + q;
                    let (oh, ow) = (p / out_w, p % out_w);
                    let ih = (oh * sh + i * dh) as isize - ph as isize;
                    let iw = (ow * sw + j * dw) as isize - pw as isize;
                    if ih >= 0 && iw >= 0 && (ih as usize) < in_h && (iw as usize) < in_w {
                        gxc[ih as usize * in_w + iw as usize] += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2D cross-correlation (no kernel flip) with stride, zero padding and dilation.
///
/// `w` is `[Cout, Cin, kh, kw]`, `b` holds `Cout` values.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let xs = x.shape();
    let (oh, ow) = spec.validate(xs, w.shape(), b.map(|b| b.shape()))?;
    let out_shape = Shape::new(xs.n, spec.out_channels, oh, ow);
    let mut out: Tensor<T> = Tensor::zeros(out_shape);
    let positions = oh * ow;
    let k = spec.patch_len();
    let cout = spec.out_channels;
    let chunk = chunk_len(k, positions);
    let mut cols = vec![T::zero(); k * chunk];

    for n in 0..xs.n {
        let xn = x.sample(n);
        let base = n * cout * positions;
        let mut p0 = 0;
        while p0 < positions {
            let len = chunk.min(positions - p0);
            im2col(xn, xs.h, xs.w, spec, ow, p0, len, &mut cols[..k * len]);
            let out_data = out.data_mut();
            // SAFETY: w is Cout x K row-major, cols is K x len row-major, and the
            // destination is Cout rows of stride `positions` starting at column p0,
            // all inside `out_data`.
            unsafe {
                T::gemm(
                    cout,
                    k,
                    len,
                    T::one(),
                    w.data().as_ptr(),
                    k as isize,
                    1,
                    cols.as_ptr(),
                    len as isize,
                    1,
                    T::zero(),
                    out_data.as_mut_ptr().add(base + p0),
                    positions as isize,
                    1,
                );
            }
            p0 += len;
        }
        if let Some(b) = b {
            let out_data = out.data_mut();
            for (co, &bv) in b.data().iter().enumerate() {
                let start = base + co * positions;
                out_data[start..start + positions].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its three inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Reverse-mode gradient of [`conv2d`]. The input gradient is skipped when
/// `need_input` is false (network inputs never need one).
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let xs = x.shape();
    let (oh, ow) = spec.validate(xs, w.shape(), None)?;
    let gs = grad_out.shape();
    let expected = Shape::new(xs.n, spec.out_channels, oh, ow);
    super::check_same(expected, gs, "conv2d_backward")?;

    let positions = oh * ow;
    let k = spec.patch_len();
    let cout = spec.out_channels;
    let chunk = chunk_len(k, positions);
    let mut cols = vec![T::zero(); k * chunk];
    let mut gcols = if need_input {
        vec![T::zero(); k * chunk]
    } else {
        Vec::new()
    };

    let mut gw = Tensor::zeros(w.shape());
    let mut gb = vec![T::zero(); cout];
    let mut gx = need_input.then(|| Tensor::zeros(xs));
    let in_plane = xs.c * xs.plane();

    for n in 0..xs.n {
        let xn = x.sample(n);
        let gy = grad_out.sample(n);
        for (co, acc) in gb.iter_mut().enumerate() {
            for &v in &gy[co * positions..(co + 1) * positions] {
                *acc += v;
            }
        }
        let mut p0 = 0;
        while p0 < positions {
            let len = chunk.min(positions - p0);
            im2col(xn, xs.h, xs.w, spec, ow, p0, len, &mut cols[..k * len]);
            // SAFETY: gy chunk is Cout x len with row stride `positions`; cols^T is
            // len x K (strides 1, len); gw is Cout x K row-major.
            unsafe {
                T::gemm(
                    cout,
                    len,
                    k,
                    T::one(),
                    gy.as_ptr().add(p0),
                    positions as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    len as isize,
                    T::one(),
                    gw.data_mut().as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            if let Some(gx) = gx.as_mut() {
                // SAFETY: w^T is K x Cout (strides 1, K); gy chunk as above; gcols K x len.
                unsafe {
                    T::gemm(
                        k,
                        cout,
                        len,
                        T::one(),
                        w.data().as_ptr(),
                        1,
                        k as isize,
                        gy.as_ptr().add(p0),
                        positions as isize,
                        1,
                        T::zero(),
                        gcols.as_mut_ptr(),
                        len as isize,
                        1,
                    );
                }
                let gxn = &mut gx.data_mut()[n * in_plane..(n + 1) * in_plane];
                col2im(&gcols[..k * len], xs.h, xs.w, spec, ow, p0, len, gxn);
            }
            p0 += len;
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: Tensor::vector(gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 1.0);
        let spec = ConvSpec::new(1, 1, 3).padding(0);
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 1, 4, 3), |n, _, h, w| {
            (n * 12 + h * 3 + w) as f64 * 0.37 - 1.0
        });
        let w = Tensor::<f64>::full(Shape::new(1, 1, 1, 1), 1.0);
        let b = Tensor::vector(vec![0.0]);
        let y = conv2d(&x, &w, Some(&b), &ConvSpec::new(1, 1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn output_size_formula() {
        // Every geometry the network uses.
        let cases = [
            (ConvSpec::new(1, 1, 5).stride(2).padding(2), (224, 192), (112, 96)),
            (ConvSpec::new(1, 1, 5).stride(2).padding(2), (112, 96), (56, 48)),
            (ConvSpec::new(1, 1, 3), (28, 24), (28, 24)),
            (ConvSpec::new(1, 1, 1), (224, 192), (224, 192)),
            (ConvSpec::new(1, 1, 3).padding(2).dilation(2), (28, 24), (28, 24)),
        ];
        for (spec, (h, w), expected) in cases {
            assert_eq!(spec.output_hw(h, w).unwrap(), expected, "{spec:?}");
        }
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f64>::zeros(Shape::new(3, 2, 3, 3));
        let err = conv2d(&x, &w, None, &ConvSpec::new(3, 3, 3)).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let err = conv2d(&x, &w, None, &ConvSpec::new(2, 3, 5)).unwrap_err();
        assert!(err.to_string().contains("kernel height"), "{err}");
        let b = Tensor::vector(vec![0.0; 2]);
        let err = conv2d(&x, &w, Some(&b), &ConvSpec::new(2, 3, 3)).unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");
    }

    #[test]
    fn chunked_and_unchunked_paths_agree() {
        // Patch length 64*9 forces several chunks for a 48x40 output.
        let spec = ConvSpec::new(64, 2, 3);
        let x = Tensor::<f64>::from_fn(Shape::new(1, 64, 48, 40), |_, c, h, w| {
            ((c * 7 + h * 3 + w) % 11) as f64 - 5.0
        });
        let w = Tensor::<f64>::from_fn(spec.weight_shape(), |o, c, i, j| ((o + c + i * 2 + j) % 5) as f64 * 0.1);
        assert!(chunk_len(spec.patch_len(), 48 * 40) < 48 * 40);
        let y = conv2d(&x, &w, None, &spec).unwrap();
        // Spot-check one interior output by direct summation.
        let (oh, ow) = (17, 23);
        let mut acc = 0.0;
        for c in 0..64 {
            for i in 0..3 {
                for j in 0..3 {
                    acc += x.at(0, c, oh + i - 1, ow + j - 1) * w.at(1, c, i, j);
                }
            }
        }
        assert!((y.at(0, 1, oh, ow) - acc).abs() < 1e-9);
    }
}
