use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, SkeletonSequence};
use crate::error::{Error, Result};
use crate::graph::TopologyKind;
use crate::tensor::Tensor;

/// Oscillation period (frames) of each class archetype.
const PERIODS: [usize; 8] = [32, 16, 24, 12, 40, 20, 48, 28];
pub const MAX_SYNTHETIC_CLASSES: usize = PERIODS.len();

fn default_noise() -> f64 {
    0.05
}

fn default_persons() -> usize {
    1
}

/// Parameters of a synthetic draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub topology: TopologyKind,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the coordinate noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Person slots; only the first is populated.
    #[serde(default = "default_persons")]
    pub persons: usize,
}

impl SyntheticSpec {
    pub fn new(num_classes: usize, samples_per_class: usize, topology: TopologyKind, frames: usize, seed: u64) -> Self {
        SyntheticSpec {
            num_classes,
            samples_per_class,
            topology,
            frames,
            seed,
            noise: default_noise(),
            persons: 1,
        }
    }
}

/// Joints that move for class `k`.
fn active_joints(k: usize, num_classes: usize, v: usize) -> Vec<usize> {
    let group: Vec<usize> = (0..v).filter(|j| j % num_classes == k).collect();
    if group.is_empty() {
        vec![k % v]
    } else {
        group
    }
}

/// Generates a balanced dataset: sample `i` has label `i mod K`, and class `k`
/// oscillates its own joint group with period and phase specific to `k`.
///
/// Each sample draws from its own stream seeded with `seed ⊕ i`, so samples
/// are independent of generation order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let k = spec.num_classes;
    if k == 0 || k > MAX_SYNTHETIC_CLASSES {
        return Err(Error::Config(format!(
            "synthetic data supports 1..={MAX_SYNTHETIC_CLASSES} classes, got {k}"
        )));
    }
    if spec.frames == 0 || spec.persons == 0 {
        return Err(Error::Config("synthetic frames and persons must be positive".into()));
    }
    let noise = Normal::new(0.0, spec.noise)
        .map_err(|e| Error::Config(format!("invalid synthetic noise {}: {e}", spec.noise)))?;
    let v = spec.topology.num_joints();
    let groups: Vec<Vec<usize>> = (0..k).map(|c| active_joints(c, k, v)).collect();
    let total = k * spec.samples_per_class;
    let mut samples = Vec::with_capacity(total);
    for i in 0..total {
        let label = i % k;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ i as u64);
        let amplitude = 0.5 * (1.0 + rng.random_range(-0.1..0.1));
        let phase = label as f64 * PI / 4.0 + rng.random_range(-0.3..0.3);
        let offset: [f64; 3] = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
        let period = PERIODS[label];
        let active = &groups[label];
        let values = Tensor::from_fn(&[3, spec.frames, v, spec.persons], |idx| {
            let (c, t, j, m) = (idx[0], idx[1], idx[2], idx[3]);
            if m > 0 {
                return 0.0;
            }
            let base = if c == 0 { 0.1 * j as f64 } else { 0.0 } + offset[c];
            let wave = if active.contains(&j) {
                // `t mod period` keeps noiseless archetypes exactly periodic.
                let angle = 2.0 * PI * (t % period) as f64 / period as f64 + phase + c as f64 * 2.0 * PI / 3.0;
                amplitude * angle.sin()
            } else {
                0.0
            };
            (base + wave + noise.sample(&mut rng)) as f32
        });
        samples.push(SkeletonSequence {
            values,
            label,
            valid_frames: spec.frames,
        });
    }
    Ok(Dataset {
        num_classes: k,
        topology: spec.topology,
        samples,
    })
}
