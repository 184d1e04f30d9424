use std::fmt;
use std::str::FromStr;

use super::schedule::GrowthSchedule;
use crate::error::{Error, Result};

/// Attention module placed on each block's dense concatenation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    None,
    /// Squeeze-and-excitation channel attention.
    Se,
    /// Channel (avg + max) then spatial attention.
    Cbam,
    /// Four-branch channel / spatial / cross-dimension attention.
    Joint,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 4] = [
        AttentionKind::None,
        AttentionKind::Se,
        AttentionKind::Cbam,
        AttentionKind::Joint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::Se => "se",
            AttentionKind::Cbam => "cbam",
            AttentionKind::Joint => "joint",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AttentionKind::None),
            "se" => Ok(AttentionKind::Se),
            "cbam" => Ok(AttentionKind::Cbam),
            "joint" | "ja" => Ok(AttentionKind::Joint),
            other => Err(Error::Config(format!("unknown attention kind '{other}'"))),
        }
    }
}

/// Complete architecture description.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub scale: usize,
    pub num_blocks: usize,
    pub trunk_channels: usize,
    pub growth: GrowthSchedule,
    pub attention: AttentionKind,
    pub reduction: usize,
    /// Adds the head features to the body output before reconstruction.
    pub global_skip: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            scale: 4,
            num_blocks: 16,
            trunk_channels: 64,
            growth: GrowthSchedule::default(),
            attention: AttentionKind::Joint,
            reduction: 16,
            global_skip: false,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

/// Keys accepted by [`NetworkConfig::set`], in canonical order.
pub const MODEL_KEYS: [&str; 13] = [
    "scale",
    "num_blocks",
    "trunk_channels",
    "c0",
    "g0",
    "g",
    "layers",
    "attention",
    "reduction",
    "global_skip",
    "bn_momentum",
    "bn_eps",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

impl NetworkConfig {
    pub fn with_scale(mut self, scale: usize) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_attention(mut self, attention: AttentionKind) -> Self {
        self.attention = attention;
        self
    }

    /// Sub-pixel stages: `[2]`, `[3]`, or `[2, 2]`.
    pub fn upsample_stages(&self) -> Result<Vec<usize>> {
        match self.scale {
            2 => Ok(vec![2]),
            3 => Ok(vec![3]),
            4 => Ok(vec![2, 2]),
            s => Err(Error::Config(format!("unsupported scale {s}; expected 2, 3 or 4"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.upsample_stages()?;
        self.growth.table()?;
        if self.num_blocks == 0 || self.trunk_channels == 0 {
            return Err(Error::Config("num_blocks and trunk_channels must be positive".into()));
        }
        if self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_eps must be > 0 and bn_momentum in [0, 1]".into()));
        }
        if self.attention != AttentionKind::None {
            let width = self.growth.concat_width();
            if self.reduction == 0 || width % self.reduction != 0 {
                return Err(Error::Divisibility {
                    what: "attention width".into(),
                    value: width,
                    divisor: self.reduction,
                });
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scale" => self.scale = parse(key, value)?,
            "num_blocks" => self.num_blocks = parse(key, value)?,
            "trunk_channels" => self.trunk_channels = parse(key, value)?,
            "c0" => self.growth.c0 = parse(key, value)?,
            "g0" => self.growth.g0 = parse(key, value)?,
            "g" => self.growth.g = parse(key, value)?,
            "layers" => self.growth.layers = parse(key, value)?,
            "attention" => self.attention = value.trim().parse()?,
            "reduction" => self.reduction = parse(key, value)?,
            "global_skip" => self.global_skip = parse(key, value)?,
            "bn_momentum" => self.bn_momentum = parse(key, value)?,
            "bn_eps" => self.bn_eps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key '{key}'"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "scale" => self.scale.to_string(),
            "num_blocks" => self.num_blocks.to_string(),
            "trunk_channels" => self.trunk_channels.to_string(),
            "c0" => self.growth.c0.to_string(),
            "g0" => self.growth.g0.to_string(),
            "g" => self.growth.g.to_string(),
            "layers" => self.growth.layers.to_string(),
            "attention" => self.attention.to_string(),
            "reduction" => self.reduction.to_string(),
            "global_skip" => self.global_skip.to_string(),
            // `{:?}` round-trips f64 exactly.
            "bn_momentum" => format!("{:?}", self.bn_momentum),
            "bn_eps" => format!("{:?}", self.bn_eps),
            "seed" => self.seed.to_string(),
            _ => unreachable!("key list is closed"),
        }
    }

    /// Canonical `key = value` lines, one per key in [`MODEL_KEYS`] order.
    pub fn to_canonical(&self) -> String {
        MODEL_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k)))
            .collect()
    }

    pub fn from_canonical(text: &str) -> Result<Self> {
        let mut cfg = NetworkConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed line '{line}'")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}
