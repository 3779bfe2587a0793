//! Minibatch SGD training, validation and run-directory bookkeeping.
//!
//! A run directory holds `manifest.txt` (resolved configuration),
//! `epoch_NNNN.vcaw` weights and `epoch_NNNN.sgd` optimizer state per epoch,
//! `history.csv`, and `abort.txt` if training stopped on a non-finite loss.

mod history;
mod overfit;
mod sgd;

pub use history::{read_history, write_history, EpochRecord, RunHistory, ValRecord};
pub use overfit::{overfit_smoke, CurvePoint, OverfitConfig, OverfitControl, OverfitOutcome};
pub use sgd::{sgd_step, SgdConfig, SgdState};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{resize_mask, SliceSample};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, soft_dice, LossBreakdown, LossConfig};
use crate::mask::Mask;
use crate::metrics::{aggregate, evaluate_pair, AggMode, MetricsRow, Summary};
use crate::model::{predict_mask, VcaNet};
use crate::tensor::{BnMode, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation soft-dice;
    /// 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub shuffle: bool,
    pub include_empty_slices: bool,
    /// Probability cut-off for validation masks.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-8,
            batch_size: 8,
            epochs: 50,
            patience: 10,
            seed: 0,
            loss: LossConfig::default(),
            shuffle: true,
            include_empty_slices: false,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay {} must be finite and non-negative",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        self.loss.validate()
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs: Vec<(String, String)> = vec![
            ("lr".into(), format!("{:?}", self.lr)),
            ("momentum".into(), format!("{:?}", self.momentum)),
            ("weight_decay".into(), format!("{:?}", self.weight_decay)),
            ("batch".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("train_seed".into(), self.seed.to_string()),
            ("shuffle".into(), self.shuffle.to_string()),
            ("include_empty_slices".into(), self.include_empty_slices.to_string()),
            ("threshold".into(), format!("{:?}", self.threshold)),
        ];
        pairs.extend(self.loss.to_pairs());
        pairs
    }
}

/// Model-resolution tensors for one sample.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    /// Mask at sample resolution, for metrics.
    pub truth: Mask,
    pub volume_id: String,
    pub slice_index: usize,
}

pub(crate) fn prepare(samples: &[SliceSample], hw: (usize, usize)) -> Vec<Prepared> {
    samples
        .iter()
        .map(|s| Prepared {
            image: s.image_tensor(hw),
            mask: s.mask_tensor(hw),
            truth: s.mask().clone(),
            volume_id: s.volume_id().to_string(),
            slice_index: s.slice_index(),
        })
        .collect()
}

fn stack(items: &[&Prepared]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<Tensor<f32>> = items.iter().map(|p| p.image.clone()).collect();
    let masks: Vec<Tensor<f32>> = items.iter().map(|p| p.mask.clone()).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// Per-slice soft-dice of each sample in a `[N, 1, H, W]` batch.
pub fn per_slice_soft_dice(prob: &Tensor<f32>, target: &Tensor<f32>, eps_dice: f64) -> Result<Vec<f64>> {
    (0..prob.shape().n)
        .map(|n| soft_dice(&prob.select(n), &target.select(n), eps_dice))
        .collect()
}

/// Result of [`evaluate`].
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<MetricsRow>,
    pub mode_a: Summary,
    pub mode_b: Summary,
    /// Mean per-slice soft-dice of the probability maps.
    pub soft_dice: f64,
    /// Thresholded predictions at sample resolution (nearest-resized from
    /// the model grid when they differ), in sample order.
    pub predictions: Vec<Mask>,
}

/// Eval-mode forward over `samples` in batches, thresholded at `threshold`,
/// with metric rows and both aggregation modes. Metrics are computed on the
/// samples' own 224x192 grid.
pub fn evaluate(net: &VcaNet<f32>, samples: &[SliceSample], threshold: f64, batch_size: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let prepared = prepare(samples, net.config().input_hw);
    evaluate_prepared(net, &prepared, threshold, batch_size, LossConfig::default().eps_dice)
}

pub(crate) fn evaluate_prepared(
    net: &VcaNet<f32>,
    prepared: &[Prepared],
    threshold: f64,
    batch_size: usize,
    eps_dice: f64,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(prepared.len());
    let mut predictions = Vec::with_capacity(prepared.len());
    let mut dice_sum = 0.0;
    for chunk in prepared.chunks(batch_size.max(1)) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let (x, y) = stack(&refs)?;
        let prob = net.forward(&x, BnMode::Eval)?.prob_map().clone();
        dice_sum += per_slice_soft_dice(&prob, &y, eps_dice)?.iter().sum::<f64>();
        for (mask, p) in predict_mask(&prob, threshold)?.into_iter().zip(chunk) {
            let mask = if (mask.height(), mask.width()) == (p.truth.height(), p.truth.width()) {
                mask
            } else {
                resize_mask(&mask, (p.truth.height(), p.truth.width()))
            };
            rows.push(evaluate_pair(&mask, &p.truth, &p.volume_id, p.slice_index)?);
            predictions.push(mask);
        }
    }
    Ok(EvalReport {
        mode_a: aggregate(&rows, AggMode::ExcludeUndefined)?,
        mode_b: aggregate(&rows, AggMode::CountEmptyMatchAsOne)?,
        rows,
        soft_dice: dice_sum / prepared.len() as f64,
        predictions,
    })
}

/// Shuffled sample order of `epoch` (1-based). Depends only on
/// `(seed, epoch)` so a resumed run sees the same batches.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.vcaw"))
}

pub fn optimizer_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.sgd"))
}

/// Owns the network, optimizer state and history of one run.
pub struct Trainer {
    pub net: VcaNet<f32>,
    pub sgd: SgdState<f32>,
    pub history: RunHistory,
    pub cfg: TrainConfig,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(net: VcaNet<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let sgd = SgdState::new(net.params());
        Ok(Trainer {
            net,
            sgd,
            history: RunHistory::default(),
            cfg,
            out_dir: None,
        })
    }

    /// Writes checkpoints, history and the manifest under `dir`.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.out_dir = Some(dir.to_path_buf());
        self.write_manifest(&[])?;
        Ok(self)
    }

    /// Continues the run in `dir` from the end of `epoch`.
    pub fn resume(dir: &Path, epoch: usize, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = VcaNet::<f32>::load(&checkpoint_path(dir, epoch))?;
        let sgd = SgdState::load(net.params(), &optimizer_path(dir, epoch))?;
        let mut history = read_history(&dir.join("history.csv"))?;
        history.records.retain(|r| r.epoch <= epoch);
        if history.records.len() != epoch {
            return Err(Error::Malformed {
                what: "history",
                msg: format!(
                    "expected {epoch} records before resuming, found {}",
                    history.records.len()
                ),
            });
        }
        Ok(Trainer {
            net,
            sgd,
            history,
            cfg,
            out_dir: Some(dir.to_path_buf()),
        })
    }

    pub fn out_dir(&self) -> Option<&Path> {
        self.out_dir.as_deref()
    }

    /// Resolved configuration as `key=value` lines; `extra` pairs (data
    /// paths, split settings) are appended.
    pub fn write_manifest(&self, extra: &[(String, String)]) -> Result<()> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        let mut text = String::new();
        for (k, v) in self
            .net
            .config()
            .to_pairs()
            .iter()
            .chain(&self.cfg.to_pairs())
            .chain(extra)
        {
            text.push_str(&format!("{k}={v}\n"));
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    /// One optimization step on `batch`; `None` when the batch is skipped.
    fn step(&mut self, batch: &[&Prepared]) -> Result<Option<LossBreakdown>> {
        if batch.len() < 2 {
            warn!(
                "skipping batch of size {} at step {} (batch norm needs at least 2 samples)",
                batch.len(),
                self.sgd.step
            );
            return Ok(None);
        }
        let (x, y) = stack(batch)?;
        let pass = self.net.forward(&x, BnMode::Train)?;
        let (loss, grad) = combined_loss(pass.prob_map(), &y, &self.cfg.loss)?;
        if !loss.is_finite() || !grad.is_finite() {
            let ids: Vec<String> = batch
                .iter()
                .map(|p| format!("{}:{}", p.volume_id, p.slice_index))
                .collect();
            let detail = format!(
                "batch [{}]; focal={} dice_log={} bce={} total={}",
                ids.join(", "),
                loss.focal,
                loss.dice_log,
                loss.bce,
                loss.total
            );
            if let Some(dir) = &self.out_dir {
                let path = dir.join("abort.txt");
                let text = format!("step={}\n{detail}\n", self.sgd.step);
                fs::write(&path, text).map_err(|e| Error::io(path, e))?;
            }
            return Err(Error::NonFiniteLoss {
                step: self.sgd.step,
                detail,
            });
        }
        self.net.apply_bn_updates(&pass);
        self.net.backward(&pass, grad)?;
        sgd_step(self.net.params_mut(), &mut self.sgd, &self.cfg.sgd())?;
        Ok(Some(loss))
    }

    fn run_epoch(&mut self, train: &[Prepared], val: &[Prepared]) -> Result<()> {
        let epoch = self.history.records.len() + 1;
        let started = Instant::now();
        let order = epoch_order(train.len(), self.cfg.seed, epoch, self.cfg.shuffle);
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        for idx in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Prepared> = idx.iter().map(|&i| &train[i]).collect();
            if let Some(l) = self.step(&batch)? {
                sums[0] += l.focal;
                sums[1] += l.dice_log;
                sums[2] += l.bce;
                steps += 1;
            }
        }
        let mean = |s: f64| if steps == 0 { 0.0 } else { s / steps as f64 };
        let (focal, dice_log, bce) = (mean(sums[0]), mean(sums[1]), mean(sums[2]));
        let val_record = if val.is_empty() {
            None
        } else {
            let report = evaluate_prepared(
                &self.net,
                val,
                self.cfg.threshold,
                self.cfg.batch_size,
                self.cfg.loss.eps_dice,
            )?;
            Some(ValRecord::from_report(&report))
        };
        let checkpoint = match &self.out_dir {
            Some(dir) => {
                let path = checkpoint_path(dir, epoch);
                self.net.save_weights(&path)?;
                self.sgd.save(self.net.params(), &optimizer_path(dir, epoch))?;
                Some(path)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            steps,
            focal,
            dice_log,
            bce,
            total: focal + dice_log + bce,
            val: val_record,
            wall_secs: started.elapsed().as_secs_f64(),
            checkpoint,
        };
        info!(
            "epoch {epoch}: steps={steps} total={:.6} focal={focal:.6} dice_log={dice_log:.6} bce={bce:.6}{}",
            record.total,
            record
                .val
                .as_ref()
                .map(|v| format!(" val_soft_dice={:.4}", v.soft_dice))
                .unwrap_or_default()
        );
        self.history.records.push(record);
        if let Some(dir) = &self.out_dir {
            write_history(&dir.join("history.csv"), &self.history)?;
        }
        Ok(())
    }

    fn should_stop(&self) -> bool {
        if self.cfg.patience == 0 {
            return false;
        }
        let scores: Vec<f64> = self
            .history
            .records
            .iter()
            .filter_map(|r| r.val.as_ref().map(|v| v.soft_dice))
            .collect();
        let Some(best_at) = scores
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((i, s)),
            })
            .map(|(i, _)| i)
        else {
            return false;
        };
        scores.len() - 1 - best_at >= self.cfg.patience
    }

    /// Trains until `cfg.epochs` epochs are recorded or early stopping fires.
    pub fn fit(&mut self, train_set: &[SliceSample], val_set: &[SliceSample]) -> Result<&RunHistory> {
        let hw = self.net.config().input_hw;
        let train_samples: Vec<SliceSample> = train_set
            .iter()
            .filter(|s| self.cfg.include_empty_slices || !s.mask().is_empty())
            .cloned()
            .collect();
        if train_samples.is_empty() {
            return Err(Error::invalid("train", "no training samples"));
        }
        let train = prepare(&train_samples, hw);
        let val = prepare(val_set, hw);
        while self.history.records.len() < self.cfg.epochs {
            if self.should_stop() {
                info!("early stop after {} epochs", self.history.records.len());
                break;
            }
            self.run_epoch(&train, &val)?;
        }
        Ok(&self.history)
    }
}

/// Builds a trainer, optionally bound to `out_dir`, and fits it.
pub fn train(
    net: VcaNet<f32>,
    train_set: &[SliceSample],
    val_set: &[SliceSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(VcaNet<f32>, RunHistory)> {
    let mut trainer = Trainer::new(net, cfg.clone())?;
    if let Some(dir) = out_dir {
        trainer = trainer.with_output(dir)?;
    }
    trainer.fit(train_set, val_set)?;
    Ok((trainer.net, trainer.history))
}
