//! Memorization check: can the network fit a handful of slices?

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SliceSample;
use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossBreakdown};
use crate::model::{ModelConfig, VcaNet};
use crate::tensor::{BnMode, Tensor};

use super::{per_slice_soft_dice, prepare, sgd_step, SgdState, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverfitControl {
    /// Ordinary training.
    None,
    /// Learning rate forced to zero.
    ZeroLr,
    /// Each step trains on a fresh random permutation of every mask's pixels.
    RandomLabels,
}

#[derive(Clone, Debug)]
pub struct OverfitConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub max_steps: usize,
    /// Pass threshold on the mean per-slice soft-dice.
    pub target: f64,
    pub control: OverfitControl,
}

impl OverfitConfig {
    /// Narrow network at 56x48, 500 steps, target 0.95.
    pub fn small() -> Self {
        OverfitConfig {
            model: ModelConfig::small().with_input_hw(56, 48),
            train: TrainConfig::default(),
            max_steps: 500,
            target: 0.95,
            control: OverfitControl::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: LossBreakdown,
    /// Mean per-slice soft-dice against the true masks.
    pub soft_dice: f64,
}

#[derive(Clone, Debug)]
pub struct OverfitOutcome {
    pub passed: bool,
    /// Steps executed (stops at the first passing step).
    pub steps: usize,
    pub curve: Vec<CurvePoint>,
    /// Eval-mode soft-dice after the last step.
    pub final_eval_soft_dice: f64,
}

impl OverfitOutcome {
    pub fn best_soft_dice(&self) -> f64 {
        self.curve.iter().map(|c| c.soft_dice).fold(0.0, f64::max)
    }
}

/// Trains on all of `samples` as one batch. Each step's train-mode forward
/// output is scored against the true masks before the update is applied;
/// the run passes as soon as that mean per-slice soft-dice exceeds `target`.
pub fn overfit_smoke(samples: &[SliceSample], cfg: &OverfitConfig) -> Result<OverfitOutcome> {
    if samples.len() < 2 {
        return Err(Error::invalid(
            "overfit_smoke",
            "need at least 2 samples for batch norm",
        ));
    }
    let mut train = cfg.train.clone();
    if cfg.control == OverfitControl::ZeroLr {
        train.lr = 0.0;
    }
    train.validate()?;
    let mut net = VcaNet::<f32>::build(cfg.model.clone())?;
    let mut sgd = SgdState::new(net.params());
    let prepared = prepare(samples, cfg.model.input_hw);
    let images: Vec<Tensor<f32>> = prepared.iter().map(|p| p.image.clone()).collect();
    let masks: Vec<Tensor<f32>> = prepared.iter().map(|p| p.mask.clone()).collect();
    let x = Tensor::stack(&images)?;
    let y = Tensor::stack(&masks)?;
    let mut label_rng = ChaCha8Rng::seed_from_u64(train.seed);

    let mut curve = Vec::new();
    let mut passed = false;
    for step in 0..cfg.max_steps {
        let pass = net.forward(&x, BnMode::Train)?;
        let dice = per_slice_soft_dice(pass.prob_map(), &y, train.loss.eps_dice)?;
        let soft_dice = dice.iter().sum::<f64>() / dice.len() as f64;
        let target = match cfg.control {
            OverfitControl::RandomLabels => {
                let mut t = y.clone();
                let plane = t.shape().plane();
                for chunk in t.data_mut().chunks_mut(plane) {
                    chunk.shuffle(&mut label_rng);
                }
                t
            }
            _ => y.clone(),
        };
        let (loss, grad) = combined_loss(pass.prob_map(), &target, &train.loss)?;
        curve.push(CurvePoint { step, loss, soft_dice });
        if soft_dice > cfg.target {
            passed = true;
            break;
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: step as u64,
                detail: format!("overfit smoke: {loss:?}"),
            });
        }
        net.apply_bn_updates(&pass);
        net.backward(&pass, grad)?;
        sgd_step(net.params_mut(), &mut sgd, &train.sgd())?;
    }
    let prob = net.forward(&x, BnMode::Eval)?.prob_map().clone();
    let eval = per_slice_soft_dice(&prob, &y, train.loss.eps_dice)?;
    Ok(OverfitOutcome {
        passed,
        steps: curve.len(),
        curve,
        final_eval_soft_dice: eval.iter().sum::<f64>() / eval.len() as f64,
    })
}
