use std::path::Path;

use crate::checkpoint::{Checkpoint, Entry};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::{ModelConfig, VcaNet};

impl<T: Scalar> VcaNet<T> {
    /// Config echo plus every parameter (running statistics included), in
    /// construction order.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.to_pairs(),
            entries: self
                .params
                .iter()
                .map(|p| Entry::from_tensor(&p.name, &p.value, p.rank))
                .collect(),
        }
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    /// Rebuilds a network from the config echoed in the checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_pairs(&ckpt.config)?;
        let mut net = VcaNet::build(config)?;
        net.fill_from(ckpt)?;
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// Overwrites this network's parameters; the checkpoint's config must
    /// match field for field.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint::read(path)?;
        let theirs = ModelConfig::from_pairs(&ckpt.config)?;
        if let Some((field, ours, found)) = self.config.first_difference(&theirs) {
            return Err(Error::ConfigMismatch {
                field,
                expected: ours,
                found,
            });
        }
        self.fill_from(&ckpt)
    }

    fn fill_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.entries.len() != self.params.len() {
            for p in self.params.iter() {
                if ckpt.entry(&p.name).is_none() {
                    return Err(Error::Malformed {
                        what: "checkpoint",
                        msg: format!("missing parameter `{}`", p.name),
                    });
                }
            }
        }
        for e in &ckpt.entries {
            let param = self
                .params
                .by_name_mut(&e.name)
                .ok_or_else(|| Error::UnknownParam(e.name.clone()))?;
            let t = e.to_tensor::<T>()?;
            if t.shape() != param.value.shape() {
                return Err(Error::Malformed {
                    what: "checkpoint",
                    msg: format!("`{}` has shape {}, expected {}", e.name, t.shape(), param.value.shape()),
                });
            }
            param.value = t;
        }
        Ok(())
    }
}
