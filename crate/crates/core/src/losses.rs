//! Training objective: focal term + log-form dice term + binary cross-entropy.
//!
//! ```text
//! total = Σ −α_t (1 − p_t)^γ ln p_t / N  +  ln(1 − soft_dice)  +  mean BCE
//! ```
//!
//! Only the focal term is divided by the pixel count `N`; the dice term is
//! one scalar for the whole batch and BCE is already a per-pixel mean.
//! `ln(1 − dice)` diverges as the prediction becomes perfect, so its
//! argument is clamped at `eps_log` (gradient zero once the clamp engages).
//! Probabilities are clamped to `[eps_prob, 1 − eps_prob]` before any log.

use crate::error::{Error, Result};
use crate::tensor::{cast, check_same, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Focal weight for the positive class; negatives get `1 - alpha`.
    pub alpha: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Soft-dice smoothing constant.
    pub eps_dice: f64,
    /// Floor for `1 - dice` inside the log.
    pub eps_log: f64,
    /// Probability clamp.
    pub eps_prob: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.25,
            gamma: 2.0,
            eps_dice: 1.0,
            eps_log: 1e-7,
            eps_prob: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be finite and >= 0", self.gamma)));
        }
        for (name, v) in [
            ("eps_dice", self.eps_dice),
            ("eps_log", self.eps_log),
            ("eps_prob", self.eps_prob),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.eps_prob >= 0.5 {
            return Err(Error::Config("eps_prob must be below 0.5".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("loss_alpha".into(), format!("{:?}", self.alpha)),
            ("loss_gamma".into(), format!("{:?}", self.gamma)),
            ("loss_eps_dice".into(), format!("{:?}", self.eps_dice)),
            ("loss_eps_log".into(), format!("{:?}", self.eps_log)),
            ("loss_eps_prob".into(), format!("{:?}", self.eps_prob)),
        ]
    }
}

/// Per-term values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub focal: f64,
    pub dice_log: f64,
    pub bce: f64,
    pub total: f64,
    pub n_pixels: usize,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.focal.is_finite() && self.dice_log.is_finite() && self.bce.is_finite() && self.total.is_finite()
    }
}

fn check_pair<T: Scalar>(op: &'static str, p: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    check_same(p.shape(), y.shape(), op)?;
    if p.is_empty() {
        return Err(Error::invalid(op, "empty input"));
    }
    if let Some((index, v)) = y
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| **v != T::zero() && **v != T::one())
    {
        return Err(Error::NonBinary {
            value: v.as_f64(),
            index,
        });
    }
    Ok(())
}

#[inline]
fn clamp(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// Derivative of the clamp: 1 strictly inside, 0 where it is engaged.
#[inline]
fn clamp_pass(p: f64, eps: f64) -> f64 {
    if p > eps && p < 1.0 - eps {
        1.0
    } else {
        0.0
    }
}

fn focal_term(p: f64, y: f64, cfg: &LossConfig) -> (f64, f64) {
    let pc = clamp(p, cfg.eps_prob);
    let positive = y == 1.0;
    let (pt, alpha_t, sign) = if positive {
        (pc, cfg.alpha, 1.0)
    } else {
        (1.0 - pc, 1.0 - cfg.alpha, -1.0)
    };
    let one_minus = 1.0 - pt;
    let ln_pt = pt.ln();
    let value = -alpha_t * one_minus.powf(cfg.gamma) * ln_pt;
    // d/dp_t [-(1-p_t)^γ ln p_t] = γ(1-p_t)^(γ-1) ln p_t - (1-p_t)^γ / p_t
    let d_pow = if cfg.gamma == 0.0 {
        0.0
    } else {
        cfg.gamma * one_minus.powf(cfg.gamma - 1.0) * ln_pt
    };
    let d_pt = alpha_t * (d_pow - one_minus.powf(cfg.gamma) / pt);
    (value, sign * d_pt * clamp_pass(p, cfg.eps_prob))
}

fn bce_term(p: f64, y: f64, eps: f64) -> (f64, f64) {
    let pc = clamp(p, eps);
    let value = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    let grad = (-y / pc + (1.0 - y) / (1.0 - pc)) * clamp_pass(p, eps);
    (value, grad)
}

/// Mean over pixels of `−α_t (1 − p_t)^γ ln p_t`.
pub fn focal_loss<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    check_pair("focal_loss", p, y)?;
    let sum: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &y)| focal_term(p.as_f64(), y.as_f64(), cfg).0)
        .sum();
    Ok(sum / p.len() as f64)
}

/// `(2 Σ p·y + eps) / (Σ p + Σ y + eps)` over the whole tensor.
pub fn soft_dice<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>, eps_dice: f64) -> Result<f64> {
    check_pair("soft_dice", p, y)?;
    let (num, den) = dice_sums(p, y);
    Ok((2.0 * num + eps_dice) / (den + eps_dice))
}

fn dice_sums<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>) -> (f64, f64) {
    let mut inter = 0.0;
    let mut total = 0.0;
    for (&p, &y) in p.data().iter().zip(y.data()) {
        let (p, y) = (p.as_f64(), y.as_f64());
        inter += p * y;
        total += p + y;
    }
    (inter, total)
}

/// `ln(max(1 − soft_dice, eps_log))`.
pub fn dice_log_loss<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    let d = soft_dice(p, y, cfg.eps_dice)?;
    Ok(dice_log_from(d, cfg.eps_log))
}

/// The clamped log term as a function of a dice value.
pub fn dice_log_from(dice: f64, eps_log: f64) -> f64 {
    if dice.is_nan() {
        return f64::NAN;
    }
    (1.0 - dice).max(eps_log).ln()
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    bce_with(p, y, LossConfig::default().eps_prob)
}

pub fn bce_with<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>, eps_prob: f64) -> Result<f64> {
    check_pair("bce", p, y)?;
    let sum: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &y)| bce_term(p.as_f64(), y.as_f64(), eps_prob).0)
        .sum();
    Ok(sum / p.len() as f64)
}

/// All three terms and the gradient of their sum with respect to `p`.
pub fn combined_loss<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>, cfg: &LossConfig) -> Result<(LossBreakdown, Tensor<T>)> {
    check_pair("combined_loss", p, y)?;
    let n = p.len() as f64;

    let (inter, total_mass) = dice_sums(p, y);
    let den = total_mass + cfg.eps_dice;
    let dice = (2.0 * inter + cfg.eps_dice) / den;
    let one_minus = 1.0 - dice;
    let dice_log = dice_log_from(dice, cfg.eps_log);
    // d ln(1-D)/dD = -1/(1-D) while the clamp is inactive
    let d_log_d_dice = if one_minus > cfg.eps_log { -1.0 / one_minus } else { 0.0 };

    let mut focal_sum = 0.0;
    let mut bce_sum = 0.0;
    let mut grad = Tensor::zeros(p.shape());
    for ((g, &pv), &yv) in grad.data_mut().iter_mut().zip(p.data()).zip(y.data()) {
        let (pv, yv) = (pv.as_f64(), yv.as_f64());
        let (fv, fg) = focal_term(pv, yv, cfg);
        let (bv, bg) = bce_term(pv, yv, cfg.eps_prob);
        focal_sum += fv;
        bce_sum += bv;
        let d_dice = (2.0 * yv * den - (2.0 * inter + cfg.eps_dice)) / (den * den);
        *g = cast(fg / n + d_log_d_dice * d_dice + bg / n);
    }
    let focal = focal_sum / n;
    let bce = bce_sum / n;
    let breakdown = LossBreakdown {
        focal,
        dice_log,
        bce,
        total: focal + dice_log + bce,
        n_pixels: p.len(),
    };
    Ok((breakdown, grad))
}
