use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blocks::{BlockSpec, FusedKind, SpatialKind, TemporalKind, DEFAULT_KERNEL_T};
use crate::error::{Error, Result};
use crate::graph::{Normalization, TopologyKind, DEFAULT_ALPHA};

/// Number of blocks in the full architecture.
pub const NUM_BLOCKS: usize = 10;
/// 1-based indices of the blocks that halve the frame count and double the width.
pub const DOWNSAMPLE_BLOCKS: [usize; 2] = [5, 8];

/// Which modules the residual blocks (2–10) use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Plain SGC + TGC.
    Stgcn,
    /// MS-GC + TGC.
    Msgcn,
    /// SGC + MT-GC.
    Mtgcn,
    /// MS-GC + MT-GC.
    Mstgcn,
    /// STR-GC.
    Strgcn,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Stgcn, Family::Msgcn, Family::Mtgcn, Family::Mstgcn, Family::Strgcn];

    pub fn name(self) -> &'static str {
        match self {
            Family::Stgcn => "stgcn",
            Family::Msgcn => "msgcn",
            Family::Mtgcn => "mtgcn",
            Family::Mstgcn => "mstgcn",
            Family::Strgcn => "strgcn",
        }
    }

    fn kinds(self) -> (SpatialKind, TemporalKind, FusedKind) {
        use {FusedKind as U, SpatialKind as S, TemporalKind as T};
        match self {
            Family::Stgcn => (S::Regular, T::Regular, U::None),
            Family::Msgcn => (S::Ms, T::Regular, U::None),
            Family::Mtgcn => (S::Regular, T::Mt, U::None),
            Family::Mstgcn => (S::Ms, T::Mt, U::None),
            Family::Strgcn => (S::Regular, T::Regular, U::Str),
        }
    }
}

/// A `"<family>-<c>c-<s>s"` architecture preset: `c` channels per fragment in
/// the first stage, `s` fragments, so the base width is `c·s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Preset {
    pub family: Family,
    pub c: usize,
    pub s: usize,
}

/// Named rows of the reference configuration tables, plus a desk-scale model.
pub const CATALOG: [&str; 7] = [
    "stgcn-64c-1s",
    "msgcn-17c-4s",
    "mtgcn-24c-4s",
    "mstgcn-30c-4s",
    "strgcn-30c-4s",
    "mstgcn-16c-4s",
    "mstgcn-8c-2s",
];

impl Preset {
    pub fn base_width(&self) -> usize {
        self.c * self.s
    }

    /// Block specs for a network whose input has `in_channels` channels.
    pub fn blocks(&self, in_channels: usize, kernel_t: usize) -> Vec<BlockSpec> {
        let b = self.base_width();
        let (spatial, temporal, fused) = self.family.kinds();
        let mut blocks = vec![BlockSpec {
            kernel_t,
            ..BlockSpec::regular(in_channels, b, 1, false)
        }];
        let mut width = b;
        for k in 2..=NUM_BLOCKS {
            let down = DOWNSAMPLE_BLOCKS.contains(&k);
            let out = if down { width * 2 } else { width };
            blocks.push(BlockSpec {
                spatial_kind: spatial,
                temporal_kind: temporal,
                fused,
                in_channels: width,
                out_channels: out,
                s: self.s,
                kernel_t,
                stride: if down { 2 } else { 1 },
                has_residual: true,
            });
            width = out;
        }
        blocks
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}c-{}s", self.family.name(), self.c, self.s)
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "invalid preset {text:?}: expected <family>-<c>c-<s>s with family one of stgcn, msgcn, mtgcn, mstgcn, strgcn"
            ))
        };
        let mut parts = text.split('-');
        let (Some(family), Some(c), Some(s), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let family = Family::ALL.into_iter().find(|f| f.name() == family).ok_or_else(bad)?;
        let number = |p: &str, suffix: char| -> Option<usize> {
            p.strip_suffix(suffix)?.parse().ok().filter(|&n: &usize| n > 0)
        };
        let (c, s) = (number(c, 'c').ok_or_else(bad)?, number(s, 's').ok_or_else(bad)?);
        if family == Family::Stgcn && s != 1 {
            return Err(Error::Config(format!("preset {text:?}: stgcn has no fragments, use 1s")));
        }
        Ok(Preset { family, c, s })
    }
}

impl Serialize for Preset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Preset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn default_persons() -> usize {
    1
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Complete description of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub topology: TopologyKind,
    pub num_classes: usize,
    pub in_channels: usize,
    #[serde(default = "default_persons")]
    pub max_persons: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub blocks: Vec<BlockSpec>,
}

impl NetworkConfig {
    pub fn from_preset(preset: Preset, topology: TopologyKind, num_classes: usize, in_channels: usize) -> Self {
        NetworkConfig {
            topology,
            num_classes,
            in_channels,
            max_persons: 1,
            seed: 0,
            normalization: Normalization::default(),
            alpha: DEFAULT_ALPHA,
            blocks: preset.blocks(in_channels, DEFAULT_KERNEL_T),
        }
    }

    /// Product of block strides; input frame counts must be a multiple of it.
    pub fn temporal_reduction(&self) -> usize {
        self.blocks.iter().map(|b| b.stride).product()
    }

    /// Output width of the backbone.
    pub fn feature_channels(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.out_channels)
    }

    /// Rules every network must satisfy, whatever its depth.
    pub fn structural_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_classes == 0 {
            out.push("num_classes must be positive".to_string());
        }
        if self.in_channels == 0 {
            out.push("in_channels must be positive".to_string());
        }
        if self.max_persons == 0 {
            out.push("max_persons must be positive".to_string());
        }
        if !(self.alpha > 0.0) {
            out.push(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.blocks.is_empty() {
            out.push("at least one block is required".to_string());
        }
        let mut width = self.in_channels;
        for (i, block) in self.blocks.iter().enumerate() {
            let k = i + 1;
            if block.in_channels != width {
                out.push(format!("block {k}: in_channels {} but previous output is {width}", block.in_channels));
            }
            out.extend(block.problems().into_iter().map(|p| format!("block {k}: {p}")));
            width = block.out_channels;
        }
        out
    }

    /// Structural rules plus the fixed 10-block layout.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.structural_problems();
        if self.blocks.len() != NUM_BLOCKS {
            out.push(format!("expected {NUM_BLOCKS} blocks, got {}", self.blocks.len()));
            return out;
        }
        if self.blocks[0].has_residual {
            out.push("block 1: must not have a residual connection".to_string());
        }
        for (i, block) in self.blocks.iter().enumerate().skip(1) {
            let k = i + 1;
            if !block.has_residual {
                out.push(format!("block {k}: residual connection required"));
            }
            let down = DOWNSAMPLE_BLOCKS.contains(&k);
            if down && (block.stride != 2 || block.out_channels != 2 * block.in_channels) {
                out.push(format!("block {k}: must use stride 2 and double the channels"));
            }
            if !down && (block.stride != 1 || block.out_channels != block.in_channels) {
                out.push(format!("block {k}: must use stride 1 and keep the channel count"));
            }
        }
        if self.blocks[0].stride != 1 {
            out.push("block 1: must use stride 1".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        into_result(self.problems())
    }

    pub fn validate_structure(&self) -> Result<()> {
        into_result(self.structural_problems())
    }
}

fn into_result(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}
