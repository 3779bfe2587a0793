use crate::error::{Error, Result};

use super::{check_same, Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineKind {
    ConcatChannels,
    Add,
}

/// Stack along the channel axis, preserving input order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?.shape();
    for x in &xs[1..] {
        let s = x.shape();
        for (axis, a, b) in [("N", first.n, s.n), ("H", first.h, s.h), ("W", first.w, s.w)] {
            if a != b {
                return Err(Error::shape("concat", axis, a, b));
            }
        }
    }
    let c: usize = xs.iter().map(|x| x.shape().c).sum();
    let out_shape = first.with_c(c);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for x in xs {
            data.extend_from_slice(x.sample(n));
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Split a channel-concatenated gradient back into per-input pieces.
pub fn concat_channels_backward<T: Scalar>(parts: &[Shape], grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let gs = grad_out.shape();
    let c: usize = parts.iter().map(|s| s.c).sum();
    if c != gs.c {
        return Err(Error::shape("concat_backward", "C", c, gs.c));
    }
    let mut outs: Vec<Vec<T>> = parts.iter().map(|s| Vec::with_capacity(s.numel())).collect();
    for n in 0..gs.n {
        let sample = grad_out.sample(n);
        let mut offset = 0;
        for (p, out) in parts.iter().zip(outs.iter_mut()) {
            let len = p.c * gs.plane();
            out.extend_from_slice(&sample[offset..offset + len]);
            offset += len;
        }
    }
    parts.iter().zip(outs).map(|(&s, d)| Tensor::from_vec(s, d)).collect()
}

/// Elementwise sum of identically shaped tensors.
pub fn add<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::invalid("add", "no inputs"))?;
    let mut out = (*first).clone();
    for x in &xs[1..] {
        check_same(first.shape(), x.shape(), "add")?;
        out.add_assign(x)?;
    }
    Ok(out)
}

/// Every addend receives the upstream gradient unchanged.
pub fn add_backward<T: Scalar>(n_inputs: usize, grad_out: &Tensor<T>) -> Vec<Tensor<T>> {
    vec![grad_out.clone(); n_inputs]
}

pub fn combine<T: Scalar>(xs: &[&Tensor<T>], kind: CombineKind) -> Result<Tensor<T>> {
    match kind {
        CombineKind::ConcatChannels => concat_channels(xs),
        CombineKind::Add => add(xs),
    }
}
