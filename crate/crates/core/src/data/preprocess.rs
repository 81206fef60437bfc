use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SkeletonSequence;
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::tensor::Tensor;

/// Sequence length after replay padding in the reference protocol.
pub const DEFAULT_PAD_FRAMES: usize = 300;
/// Training crop length in the reference protocol.
pub const DEFAULT_WINDOW: usize = 150;

/// Input representation fed to one network of the ensemble.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    #[default]
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
}

impl StreamKind {
    pub const ALL: [StreamKind; 4] = [StreamKind::Joint, StreamKind::Bone, StreamKind::JointMotion, StreamKind::BoneMotion];

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Joint => "joint",
            StreamKind::Bone => "bone",
            StreamKind::JointMotion => "joint_motion",
            StreamKind::BoneMotion => "bone_motion",
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StreamKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stream {s:?} (joint, bone, joint_motion, bone_motion)")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    /// Uniformly random start (training).
    Random,
    /// Centered window (evaluation).
    #[default]
    Center,
}

/// Repeats the valid prefix cyclically until `target` frames are filled.
pub fn pad_replay(seq: &SkeletonSequence, target: usize) -> SkeletonSequence {
    let s = seq.values.shape();
    let (c, v, m) = (s[0], s[2], s[3]);
    let valid = seq.valid_frames.max(1);
    let values = Tensor::from_fn(&[c, target, v, m], |i| seq.values.at(&[i[0], i[1] % valid, i[2], i[3]]));
    SkeletonSequence {
        values,
        label: seq.label,
        valid_frames: target,
    }
}

/// Contiguous `window`-frame slice of the valid prefix, replay-padding first
/// when the sequence is too short.
pub fn crop_window(seq: &SkeletonSequence, window: usize, mode: CropMode, rng: &mut impl Rng) -> SkeletonSequence {
    let padded;
    let seq = if seq.valid_frames < window {
        padded = pad_replay(seq, window);
        &padded
    } else {
        seq
    };
    let slack = seq.valid_frames - window;
    let start = match mode {
        CropMode::Center => slack / 2,
        CropMode::Random => rng.random_range(0..=slack),
    };
    let s = seq.values.shape();
    let values = Tensor::from_fn(&[s[0], window, s[2], s[3]], |i| seq.values.at(&[i[0], start + i[1], i[2], i[3]]));
    SkeletonSequence {
        values,
        label: seq.label,
        valid_frames: window,
    }
}

/// Sum over coordinates and joints of the temporal standard deviation of
/// person `m`'s trajectory.
pub fn person_energy(raw: &Tensor<f32>, m: usize) -> f64 {
    let s = raw.shape();
    let (c, t, v) = (s[0], s[1], s[2]);
    let mut energy = 0.0;
    for ch in 0..c {
        for j in 0..v {
            let series = (0..t).map(|tt| raw.at(&[ch, tt, j, m]) as f64);
            let mean = series.clone().sum::<f64>() / t as f64;
            let var = series.map(|x| (x - mean) * (x - mean)).sum::<f64>() / t as f64;
            energy += var.sqrt();
        }
    }
    energy
}

/// Keeps the two most energetic persons of `[C, T, V, M_raw]`, highest first
/// (ties keep slot order), zero-filling when fewer than two exist.
pub fn select_top2_persons(raw: &Tensor<f32>) -> Tensor<f32> {
    let s = raw.shape();
    let mut order: Vec<usize> = (0..s[3]).collect();
    let energy: Vec<f64> = order.iter().map(|&m| person_energy(raw, m)).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]));
    Tensor::from_fn(&[s[0], s[1], s[2], 2], |i| match order.get(i[3]) {
        Some(&m) => raw.at(&[i[0], i[1], i[2], m]),
        None => 0.0,
    })
}

/// Subtracts each present person's first-frame center-joint position from
/// that person's valid frames; absent (all-zero) persons stay zero.
pub fn normalize_center(seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
    check_joints(seq, topo)?;
    let s = seq.values.shape();
    let center = topo.center();
    let present: Vec<bool> = (0..s[3]).map(|m| (0..s[0]).any(|c| person_nonzero(seq, c, m))).collect();
    let values = Tensor::from_fn(s, |i| {
        let x = seq.values.at(i);
        if present[i[3]] && i[1] < seq.valid_frames {
            x - seq.values.at(&[i[0], 0, center, i[3]])
        } else {
            x
        }
    });
    Ok(SkeletonSequence { values, ..seq.clone() })
}

fn person_nonzero(seq: &SkeletonSequence, c: usize, m: usize) -> bool {
    let s = seq.values.shape();
    (0..s[1]).any(|t| (0..s[2]).any(|v| seq.values.at(&[c, t, v, m]) != 0.0))
}

fn check_joints(seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<()> {
    if seq.joints() != topo.num_joints() {
        return Err(Error::dim(
            "skeleton sequence",
            format!("{} joints, topology has {}", seq.joints(), topo.num_joints()),
        ));
    }
    Ok(())
}

fn bones(seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<Tensor<f32>> {
    let parents = topo.parents()?;
    Ok(Tensor::from_fn(seq.values.shape(), |i| match parents[i[2]] {
        Some(p) => seq.values.at(i) - seq.values.at(&[i[0], i[1], p, i[3]]),
        None => 0.0,
    }))
}

fn motion(values: &Tensor<f32>) -> Tensor<f32> {
    let t = values.shape()[1];
    Tensor::from_fn(values.shape(), |i| {
        if i[1] + 1 < t {
            values.at(&[i[0], i[1] + 1, i[2], i[3]]) - values.at(i)
        } else {
            0.0
        }
    })
}

/// Joint, bone (child minus parent toward the center), or their frame-to-frame
/// differences with a zero final frame.
pub fn derive_stream(seq: &SkeletonSequence, kind: StreamKind, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
    check_joints(seq, topo)?;
    let values = match kind {
        StreamKind::Joint => seq.values.clone(),
        StreamKind::Bone => bones(seq, topo)?,
        StreamKind::JointMotion => motion(&seq.values),
        StreamKind::BoneMotion => motion(&bones(seq, topo)?),
    };
    Ok(SkeletonSequence { values, ..seq.clone() })
}

fn default_true() -> bool {
    true
}

/// Per-sample preprocessing: center normalization, replay padding, stream
/// derivation and windowing, in that order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    #[serde(default)]
    pub stream: StreamKind,
    /// Replay-pad every sequence to this many frames.
    #[serde(default)]
    pub pad_to: Option<usize>,
    /// Crop length; random start in training, centered in evaluation.
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default = "default_true")]
    pub center: bool,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            stream: StreamKind::Joint,
            pad_to: None,
            window: None,
            center: true,
        }
    }
}

impl Pipeline {
    pub fn apply(
        &self,
        seq: &SkeletonSequence,
        topo: &SkeletonTopology,
        mode: CropMode,
        rng: &mut impl Rng,
    ) -> Result<SkeletonSequence> {
        let mut out = if self.center {
            normalize_center(seq, topo)?
        } else {
            seq.clone()
        };
        if let Some(target) = self.pad_to {
            out = pad_replay(&out, target);
        }
        out = derive_stream(&out, self.stream, topo)?;
        if let Some(window) = self.window {
            out = crop_window(&out, window, mode, rng);
        }
        Ok(out)
    }
}
