use crate::error::{Error, Result};
use crate::tensor::{BnConfig, UpsampleKind};

/// Stage widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Channels {
    /// V1 output (`f1`).
    pub c1: usize,
    /// V2 output (`f2`).
    pub c2: usize,
    /// V4 output (`f4`).
    pub c4: usize,
    /// Width of each IT transform; the bottleneck carries `2 * t`.
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// `(height, width)` of the single-channel input slice.
    pub input_hw: (usize, usize),
    pub channels: Channels,
    /// Output widths of the four upsampling/refinement blocks.
    pub decoder: Vec<usize>,
    pub leaky_slope: f64,
    pub upsample: UpsampleKind,
    pub seed: u64,
    pub bn: BnConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_hw: (224, 192),
            channels: Channels {
                c1: 64,
                c2: 128,
                c4: 256,
                t: 256,
            },
            decoder: vec![256, 128, 64, 32],
            leaky_slope: 0.01,
            upsample: UpsampleKind::Nearest,
            seed: 0,
            bn: BnConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small network on 16x16 inputs used by the end-to-end gradient check.
    pub fn reduced() -> Self {
        ModelConfig {
            input_hw: (16, 16),
            channels: Channels {
                c1: 4,
                c2: 8,
                c4: 16,
                t: 16,
            },
            decoder: vec![16, 8, 8, 4],
            ..ModelConfig::default()
        }
    }

    /// Full-resolution input with narrow stages; fast enough to train on a desktop core.
    pub fn small() -> Self {
        ModelConfig {
            input_hw: (224, 192),
            ..ModelConfig::reduced()
        }
    }

    pub fn with_input_hw(mut self, h: usize, w: usize) -> Self {
        self.input_hw = (h, w);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Config(format!(
                "input_hw {h}x{w} must be positive multiples of 8"
            )));
        }
        let Channels { c1, c2, c4, t } = self.channels;
        for (name, v) in [("c1", c1), ("c2", c2), ("c4", c4), ("t", t)] {
            if v == 0 {
                return Err(Error::Config(format!("channel width {name} must be positive")));
            }
        }
        for (name, v) in [("c1", c1), ("c2", c2)] {
            if v % 4 != 0 {
                return Err(Error::Config(format!(
                    "{name}={v} must be divisible by 4 (four inception branches)"
                )));
            }
        }
        if self.decoder.len() != 4 {
            return Err(Error::Config(format!(
                "decoder must have exactly 4 blocks, got {}",
                self.decoder.len()
            )));
        }
        if self.decoder.contains(&0) {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config(format!(
                "leaky_slope {} must be finite and non-negative",
                self.leaky_slope
            )));
        }
        if self.bn.eps.is_nan() || self.bn.eps <= 0.0 || !(0.0..=1.0).contains(&self.bn.momentum) {
            return Err(Error::Config(format!(
                "bn eps {} / momentum {} out of range",
                self.bn.eps, self.bn.momentum
            )));
        }
        Ok(())
    }

    /// `key=value` echo stored in checkpoints and run manifests.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let c = self.channels;
        let upsample = match self.upsample {
            UpsampleKind::Nearest => "nearest",
            UpsampleKind::Bilinear => "bilinear",
        };
        vec![
            ("input_h".into(), self.input_hw.0.to_string()),
            ("input_w".into(), self.input_hw.1.to_string()),
            ("c1".into(), c.c1.to_string()),
            ("c2".into(), c.c2.to_string()),
            ("c4".into(), c.c4.to_string()),
            ("t".into(), c.t.to_string()),
            (
                "decoder".into(),
                self.decoder.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("leaky_slope".into(), format!("{:?}", self.leaky_slope)),
            ("upsample".into(), upsample.into()),
            ("seed".into(), self.seed.to_string()),
            ("bn_eps".into(), format!("{:?}", self.bn.eps)),
            ("bn_momentum".into(), format!("{:?}", self.bn.momentum)),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("missing model config key `{key}`")))
        };
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value for `{key}`: {v:?}")))
        }
        let decoder = get("decoder")?
            .split(',')
            .map(|s| num::<usize>("decoder", s))
            .collect::<Result<Vec<_>>>()?;
        let upsample = match get("upsample")? {
            "nearest" => UpsampleKind::Nearest,
            "bilinear" => UpsampleKind::Bilinear,
            other => return Err(Error::Config(format!("unknown upsample kind {other:?}"))),
        };
        let cfg = ModelConfig {
            input_hw: (num("input_h", get("input_h")?)?, num("input_w", get("input_w")?)?),
            channels: Channels {
                c1: num("c1", get("c1")?)?,
                c2: num("c2", get("c2")?)?,
                c4: num("c4", get("c4")?)?,
                t: num("t", get("t")?)?,
            },
            decoder,
            leaky_slope: num("leaky_slope", get("leaky_slope")?)?,
            upsample,
            seed: num("seed", get("seed")?)?,
            bn: BnConfig {
                eps: num("bn_eps", get("bn_eps")?)?,
                momentum: num("bn_momentum", get("bn_momentum")?)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// First field whose echo differs, as `(field, self, other)`.
    pub fn first_difference(&self, other: &ModelConfig) -> Option<(String, String, String)> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .find(|(a, b)| a.1 != b.1)
            .map(|(a, b)| (a.0, a.1, b.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(ModelConfig::from_pairs(&c.to_pairs()).unwrap(), c);
        let r = ModelConfig::reduced();
        assert_eq!(ModelConfig::from_pairs(&r.to_pairs()).unwrap(), r);
    }

    #[test]
    fn decoder_must_have_four_blocks() {
        let c = ModelConfig {
            decoder: vec![256, 128, 64],
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("exactly 4")));
    }

    #[test]
    fn input_must_divide_by_eight() {
        assert!(ModelConfig::default().with_input_hw(233, 197).validate().is_err());
        assert!(ModelConfig::default().with_input_hw(32, 24).validate().is_ok());
    }

    #[test]
    fn first_difference_names_field() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        b.channels.c2 = 64;
        let (field, x, y) = a.first_difference(&b).unwrap();
        assert_eq!((field.as_str(), x.as_str(), y.as_str()), ("c2", "128", "64"));
    }
}
