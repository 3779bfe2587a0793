use std::path::Path;

use crate::checkpoint::{Checkpoint, Entry};
use crate::error::{Error, Result};
use crate::model::{ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// SGD hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-8,
        }
    }
}

/// Momentum buffers, one per parameter (buffers keep an unused zero entry
/// so indices line up with the store).
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<T> {
    pub velocity: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        SgdState {
            velocity: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn to_checkpoint(&self, params: &ParamStore<T>) -> Checkpoint {
        Checkpoint {
            config: vec![("step".into(), self.step.to_string())],
            entries: params
                .iter()
                .zip(&self.velocity)
                .filter(|(p, _)| p.kind == ParamKind::Weight)
                .map(|(p, v)| Entry::from_tensor(&p.name, v, p.rank))
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, params: &ParamStore<T>) -> Result<Self> {
        let step = ckpt
            .config_value("step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed {
                what: "optimizer state",
                msg: "missing `step`".into(),
            })?;
        let mut state = SgdState::new(params);
        for e in &ckpt.entries {
            let id = params.id(&e.name).ok_or_else(|| Error::UnknownParam(e.name.clone()))?;
            let v = e.to_tensor::<T>()?;
            if v.shape() != state.velocity[id].shape() {
                return Err(Error::Malformed {
                    what: "optimizer state",
                    msg: format!(
                        "velocity `{}` has shape {}, expected {}",
                        e.name,
                        v.shape(),
                        state.velocity[id].shape()
                    ),
                });
            }
            state.velocity[id] = v;
        }
        state.step = step;
        Ok(state)
    }

    pub fn save(&self, params: &ParamStore<T>, path: &Path) -> Result<()> {
        self.to_checkpoint(params).write(path)
    }

    pub fn load(params: &ParamStore<T>, path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?, params)
    }
}

/// One update for every trainable parameter:
///
/// ```text
/// g' = g + weight_decay * w
/// v  = momentum * v + g'
/// w  = w - lr * v
/// ```
///
/// Gradients are cleared afterwards. Buffers are left untouched.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, state: &mut SgdState<T>, cfg: &SgdConfig) -> Result<()> {
    if state.velocity.len() != params.len() {
        return Err(Error::shape(
            "sgd_step",
            "parameter count",
            params.len(),
            state.velocity.len(),
        ));
    }
    for (p, v) in params.iter_mut().zip(&mut state.velocity) {
        if p.kind == ParamKind::Weight {
            if p.grad.shape() != p.value.shape() {
                return Err(Error::MissingGradient(p.name.clone()));
            }
            let (lr, mom, wd) = (
                T::from_f64_lossy(cfg.lr),
                T::from_f64_lossy(cfg.momentum),
                T::from_f64_lossy(cfg.weight_decay),
            );
            for ((w, g), vel) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                let g = *g + wd * *w;
                *vel = mom * *vel + g;
                *w -= lr * *vel;
            }
        }
        p.grad.fill(T::zero());
    }
    state.step += 1;
    Ok(())
}
