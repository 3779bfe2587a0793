use crate::error::{Error, Result};

use super::{cast, Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch-norm hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Per-channel running mean and (unbiased) running variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// Exponential moving average toward the batch statistics in `cache`.
    pub fn update(&mut self, cache: &BatchNormCache<T>, momentum: f64) {
        let (new_mean, new_var) = cache.running_update(&self.mean, &self.var, momentum);
        self.mean = new_mean;
        self.var = new_var;
    }
}

/// What the train-mode forward saves for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    pub x_hat: Tensor<T>,
    /// Elements per channel (N*H*W).
    pub count: usize,
}

impl<T: Scalar> BatchNormCache<T> {
    /// Running statistics after one EMA step. The variance fed to the EMA
    /// is the unbiased estimate `var * M/(M-1)`.
    pub fn running_update(&self, mean: &[T], var: &[T], momentum: f64) -> (Vec<T>, Vec<T>) {
        let m = self.count as f64;
        let correction = if self.count > 1 { m / (m - 1.0) } else { 1.0 };
        let keep = 1.0 - momentum;
        let new_mean = mean
            .iter()
            .zip(&self.mean)
            .map(|(&r, &b)| cast::<T>(keep * r.as_f64() + momentum * b.as_f64()))
            .collect();
        let new_var = var
            .iter()
            .zip(&self.var)
            .map(|(&r, &b)| cast::<T>(keep * r.as_f64() + momentum * b.as_f64() * correction))
            .collect();
        (new_mean, new_var)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn check_params<T: Scalar>(op: &'static str, x: Shape, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<()> {
    if x.n * x.h * x.w == 0 {
        return Err(Error::invalid(op, "zero-size batch"));
    }
    if gamma.len() != x.c {
        return Err(Error::shape(op, "gamma length", x.c, gamma.len()));
    }
    if beta.len() != x.c {
        return Err(Error::shape(op, "beta length", x.c, beta.len()));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(op, format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Normalize with batch statistics over `N*H*W` per channel, then apply
/// `gamma * x_hat + beta`.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let s = x.shape();
    check_params("batch_norm", s, gamma, beta, eps)?;
    let plane = s.plane();
    let count = s.n * plane;
    let mut mean = Vec::with_capacity(s.c);
    let mut var = Vec::with_capacity(s.c);
    let mut inv_std = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut sum = 0.0;
        for n in 0..s.n {
            sum += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = sum / count as f64;
        let mut sq = 0.0;
        for n in 0..s.n {
            sq += x
                .plane(n, c)
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        let v = sq / count as f64;
        mean.push(mu);
        var.push(v);
        inv_std.push(1.0 / (v + eps).sqrt());
    }

    let mut x_hat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let (mu, is) = (mean[c], inv_std[c]);
            let (g, b) = (gamma.data()[c].as_f64(), beta.data()[c].as_f64());
            let start = (n * s.c + c) * plane;
            let src = x.plane(n, c);
            let xh = &mut x_hat.data_mut()[start..start + plane];
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = cast((v.as_f64() - mu) * is);
            }
            let yd = &mut y.data_mut()[start..start + plane];
            for (d, &v) in yd.iter_mut().zip(src) {
                *d = cast(g * ((v.as_f64() - mu) * is) + b);
            }
        }
    }
    let cache = BatchNormCache {
        mean: mean.into_iter().map(cast).collect(),
        var: var.into_iter().map(cast).collect(),
        inv_std: inv_std.into_iter().map(cast).collect(),
        x_hat,
        count,
    };
    Ok((y, cache))
}

pub fn batch_norm_train_backward<T: Scalar>(
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let s = cache.x_hat.shape();
    super::check_same(s, grad_out.shape(), "batch_norm_backward")?;
    let plane = s.plane();
    let m = cache.count as f64;
    let mut g_gamma = vec![T::zero(); s.c];
    let mut g_beta = vec![T::zero(); s.c];
    let mut gx = Tensor::zeros(s);
    for c in 0..s.c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for n in 0..s.n {
            for (&g, &xh) in grad_out.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                sum_g += g.as_f64();
                sum_gx += g.as_f64() * xh.as_f64();
            }
        }
        g_beta[c] = cast(sum_g);
        g_gamma[c] = cast(sum_gx);
        let scale = gamma.data()[c].as_f64() * cache.inv_std[c].as_f64() / m;
        for n in 0..s.n {
            let start = (n * s.c + c) * plane;
            let gy = grad_out.plane(n, c);
            let xh = cache.x_hat.plane(n, c);
            let dst = &mut gx.data_mut()[start..start + plane];
            for ((d, &g), &h) in dst.iter_mut().zip(gy).zip(xh) {
                *d = cast(scale * (m * g.as_f64() - sum_g - h.as_f64() * sum_gx));
            }
        }
    }
    Ok(BatchNormGrads {
        input: gx,
        gamma: Tensor::vector(g_gamma),
        beta: Tensor::vector(g_beta),
    })
}

/// Normalize with running statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &RunningStats<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let s = x.shape();
    check_params("batch_norm", s, gamma, beta, eps)?;
    if running.mean.len() != s.c || running.var.len() != s.c {
        return Err(Error::shape(
            "batch_norm",
            "running stats length",
            s.c,
            running.mean.len(),
        ));
    }
    let plane = s.plane();
    let mut y = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let mu = running.mean[c].as_f64();
            let is = 1.0 / (running.var[c].as_f64() + eps).sqrt();
            let (g, b) = (gamma.data()[c].as_f64(), beta.data()[c].as_f64());
            let start = (n * s.c + c) * plane;
            let dst = &mut y.data_mut()[start..start + plane];
            for (d, &v) in dst.iter_mut().zip(x.plane(n, c)) {
                *d = cast(g * ((v.as_f64() - mu) * is) + b);
            }
        }
    }
    Ok(y)
}

pub fn batch_norm_eval_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    running: &RunningStats<T>,
    eps: f64,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let s = x.shape();
    super::check_same(s, grad_out.shape(), "batch_norm_backward")?;
    let plane = s.plane();
    let mut g_gamma = vec![T::zero(); s.c];
    let mut g_beta = vec![T::zero(); s.c];
    let mut gx = Tensor::zeros(s);
    for c in 0..s.c {
        let mu = running.mean[c].as_f64();
        let is = 1.0 / (running.var[c].as_f64() + eps).sqrt();
        let g = gamma.data()[c].as_f64();
        let (mut sg, mut sgx) = (0.0, 0.0);
        for n in 0..s.n {
            let start = (n * s.c + c) * plane;
            let dst = &mut gx.data_mut()[start..start + plane];
            for ((d, &gy), &v) in dst.iter_mut().zip(grad_out.plane(n, c)).zip(x.plane(n, c)) {
                let gy = gy.as_f64();
                sg += gy;
                sgx += gy * (v.as_f64() - mu) * is;
                *d = cast(gy * g * is);
            }
        }
        g_gamma[c] = cast(sgx);
        g_beta[c] = cast(sg);
    }
    Ok(BatchNormGrads {
        input: gx,
        gamma: Tensor::vector(g_gamma),
        beta: Tensor::vector(g_beta),
    })
}

/// Mode-dispatching batch norm. Train mode normalizes with batch statistics
/// and moves `running` toward them; eval mode reads `running` only.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: BnMode,
    cfg: BnConfig,
) -> Result<Tensor<T>> {
    match mode {
        BnMode::Train => {
            let (y, cache) = batch_norm_train(x, gamma, beta, cfg.eps)?;
            running.update(&cache, cfg.momentum);
            Ok(y)
        }
        BnMode::Eval => batch_norm_eval(x, gamma, beta, running, cfg.eps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(c: usize, g: f64, b: f64) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::vector(vec![g; c]), Tensor::vector(vec![b; c]))
    }

    #[test]
    fn already_normalized_input_passes_through() {
        // Per channel: values {-1, 1} repeated, mean 0, population variance 1.
        let x = Tensor::<f64>::from_fn(
            Shape::new(2, 2, 2, 2),
            |n, _, h, w| if (n + h + w) % 2 == 0 { 1.0 } else { -1.0 },
        );
        let (g, b) = affine(2, 1.0, 0.0);
        let (y, _) = batch_norm_train(&x, &g, &b, 1e-5).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e * scale).abs() < 1e-12);
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gamma_collapses_to_beta() {
        let x = Tensor::<f64>::from_fn(Shape::new(3, 2, 3, 3), |n, c, h, w| {
            (n * 7 + c * 3 + h * w) as f64 * 0.3
        });
        let (g, b) = affine(2, 0.0, 0.75);
        let (y, _) = batch_norm_train(&x, &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn running_stats_follow_ema() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 1, 1, 2), |n, _, _, w| (n * 2 + w) as f64);
        let (g, b) = affine(1, 1.0, 0.0);
        let mut rs = RunningStats::new(1);
        batch_norm(&x, &g, &b, &mut rs, BnMode::Train, BnConfig::default()).unwrap();
        // batch mean 1.5, unbiased variance 5/3
        assert!((rs.mean[0] - 0.15).abs() < 1e-12);
        assert!((rs.var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_uses_running_stats() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 3.0);
        let (g, b) = affine(1, 2.0, 1.0);
        let rs = RunningStats {
            mean: vec![1.0],
            var: vec![4.0],
        };
        let y = batch_norm_eval(&x, &g, &b, &rs, 1e-5).unwrap();
        let expected = 2.0 * (2.0 / (4.0f64 + 1e-5).sqrt()) + 1.0;
        assert!(y.data().iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn zero_size_batch_is_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(0, 2, 2, 2));
        let (g, b) = affine(2, 1.0, 0.0);
        assert!(batch_norm_train(&x, &g, &b, 1e-5).is_err());
    }
}
