//! The JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::Context;
use mstgcn::blocks::{BlockSpec, DEFAULT_KERNEL_T};
use mstgcn::data::{Pipeline, StreamKind};
use mstgcn::graph::{Normalization, TopologyKind, DEFAULT_ALPHA};
use mstgcn::network::{NetworkConfig, Preset};
use mstgcn::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Floating-point width of the engine for a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn default_in_channels() -> usize {
    3
}
fn default_kernel_t() -> usize {
    DEFAULT_KERNEL_T
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_persons() -> usize {
    1
}
fn default_true() -> bool {
    true
}

/// Architecture: exactly one of `preset`, `family`+`c`+`s`, or `blocks`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// e.g. `"mstgcn-30c-4s"`.
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Preset family spelled out; requires `c` and `s`.
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default)]
    pub c: Option<usize>,
    #[serde(default)]
    pub s: Option<usize>,
    /// Explicit block list (any depth is accepted only when structurally valid).
    #[serde(default)]
    pub blocks: Option<Vec<BlockSpec>>,
    pub topology: TopologyKind,
    pub num_classes: usize,
    /// Coordinates per joint (default 3).
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// Temporal kernel for preset-generated blocks (default 9).
    #[serde(default = "default_kernel_t")]
    pub kernel_t: usize,
    /// `"as-printed"` (default) or `"symmetric"`.
    #[serde(default)]
    pub normalization: Normalization,
    /// Degree regularizer (default 0.001).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Person slots per sample (default 1).
    #[serde(default = "default_persons")]
    pub max_persons: usize,
}

/// Dataset locations and per-sample preprocessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Training SKL1 file; `--data` overrides it.
    #[serde(default)]
    pub train: Option<PathBuf>,
    /// Validation SKL1 file; `--val` overrides it.
    #[serde(default)]
    pub val: Option<PathBuf>,
    /// Input stream (default `"joint"`).
    #[serde(default)]
    pub stream: StreamKind,
    /// Replay-pad every sequence to this many frames (default off).
    #[serde(default)]
    pub pad_to: Option<usize>,
    /// Crop length (default off).
    #[serde(default)]
    pub window: Option<usize>,
    /// Center-joint normalization (default on).
    #[serde(default = "default_true")]
    pub center: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: None,
            val: None,
            stream: StreamKind::default(),
            pad_to: None,
            window: None,
            center: default_true(),
        }
    }
}

impl DataSection {
    pub fn pipeline(&self) -> Pipeline {
        Pipeline {
            stream: self.stream,
            pad_to: self.pad_to,
            window: self.window,
            center: self.center,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    /// Seeds parameter initialization (default 0); `train.seed` drives data order.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

/// Malformed or inconsistent configuration; reported with exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration:")?;
        for p in &self.0 {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))?;
        Ok(config)
    }

    /// Minimal config for a named preset, used by `inspect`/`probe` shortcuts.
    pub fn for_preset(preset: Preset, topology: TopologyKind, num_classes: usize) -> Self {
        RunConfig {
            model: ModelSection {
                preset: Some(preset),
                family: None,
                c: None,
                s: None,
                blocks: None,
                topology,
                num_classes,
                in_channels: default_in_channels(),
                kernel_t: default_kernel_t(),
                normalization: Normalization::default(),
                alpha: default_alpha(),
                max_persons: default_persons(),
            },
            data: DataSection::default(),
            train: TrainConfig::default(),
            seed: 0,
            precision: Precision::default(),
        }
    }

    /// Network description plus whether the strict 10-block layout applies.
    pub fn network(&self) -> Result<(NetworkConfig, bool), ConfigError> {
        let m = &self.model;
        let from_parts = match (&m.family, m.c, m.s) {
            (None, None, None) => None,
            (Some(f), Some(c), Some(s)) => Some(
                format!("{f}-{c}c-{s}s")
                    .parse::<Preset>()
                    .map_err(|e| ConfigError(vec![e.to_string()]))?,
            ),
            _ => return Err(ConfigError(vec!["model.family, model.c and model.s must be given together".into()])),
        };
        let chosen = [m.preset.is_some(), from_parts.is_some(), m.blocks.is_some()];
        if chosen.iter().filter(|&&b| b).count() != 1 {
            return Err(ConfigError(vec![
                "model needs exactly one of: preset, family+c+s, blocks".into(),
            ]));
        }
        let (blocks, strict) = match (m.preset.or(from_parts), &m.blocks) {
            (Some(p), _) => (p.blocks(m.in_channels, m.kernel_t), true),
            (None, Some(b)) => (b.clone(), false),
            (None, None) => unreachable!("checked above"),
        };
        let cfg = NetworkConfig {
            topology: m.topology,
            num_classes: m.num_classes,
            in_channels: m.in_channels,
            max_persons: m.max_persons,
            seed: self.seed,
            normalization: m.normalization,
            alpha: m.alpha,
            blocks,
        };
        let problems = if strict { cfg.problems() } else { cfg.structural_problems() };
        let mut problems = problems;
        problems.extend(self.train.problems());
        if problems.is_empty() {
            Ok((cfg, strict))
        } else {
            Err(ConfigError(problems))
        }
    }
}
