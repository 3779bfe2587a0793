use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::SliceSample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitLevel {
    #[default]
    Slice,
    /// All slices of a volume land on the same side.
    Volume,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    /// Validation share; 0.1 gives the 9:1 split.
    pub val_fraction: f64,
    pub level: SplitLevel,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            val_fraction: 0.1,
            level: SplitLevel::Slice,
            seed: 0,
        }
    }
}

const MIN_ITEMS: usize = 10;

fn n_val(items: usize, fraction: f64) -> usize {
    ((items as f64 * fraction).round() as usize).clamp(1, items - 1)
}

/// Seeded shuffle then partition; returns `(train, val)` sample indices,
/// each sorted ascending.
pub fn split_indices(samples: &[SliceSample], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val fraction {} must lie in (0, 1)",
            spec.val_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut is_val = vec![false; samples.len()];
    match spec.level {
        SplitLevel::Slice => {
            if samples.len() < MIN_ITEMS {
                return Err(Error::invalid(
                    "split",
                    format!("need at least {MIN_ITEMS} slices, got {}", samples.len()),
                ));
            }
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng);
            for &i in &order[..n_val(samples.len(), spec.val_fraction)] {
                is_val[i] = true;
            }
        }
        SplitLevel::Volume => {
            let mut volumes: Vec<&str> = Vec::new();
            for s in samples {
                if !volumes.contains(&s.volume_id()) {
                    volumes.push(s.volume_id());
                }
            }
            if volumes.len() < MIN_ITEMS {
                return Err(Error::invalid(
                    "split",
                    format!("need at least {MIN_ITEMS} volumes, got {}", volumes.len()),
                ));
            }
            volumes.shuffle(&mut rng);
            let val = &volumes[..n_val(volumes.len(), spec.val_fraction)];
            for (flag, s) in is_val.iter_mut().zip(samples) {
                *flag = val.contains(&s.volume_id());
            }
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| is_val[i]);
    Ok((train, val))
}

pub fn split(samples: Vec<SliceSample>, spec: &SplitSpec) -> Result<(Vec<SliceSample>, Vec<SliceSample>)> {
    let (_, val) = split_indices(&samples, spec)?;
    let mut flags = vec![false; samples.len()];
    for i in val {
        flags[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = samples.into_iter().zip(flags).partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(s, _)| s).collect(),
        val.into_iter().map(|(s, _)| s).collect(),
    ))
}
