use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::MstGcn;
use crate::blocks::{BlockBody, SpatialUnit, StGcBlock, TemporalUnit};
use crate::tensor::Real;

/// Trainable scalars of one block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockCount {
    pub name: String,
    pub layout: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub total: usize,
}

/// Weight count of each sub-convolution against the unsplit convolution of
/// the same width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RatioCheck {
    pub module: String,
    pub s: usize,
    pub full_weights: usize,
    pub fragment_weights: Vec<usize>,
    /// Every fragment holds exactly `full_weights / s²`.
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterReport {
    pub total: usize,
    pub groups: BTreeMap<String, usize>,
    pub input_bn: usize,
    pub blocks: Vec<BlockCount>,
    pub classifier: usize,
    pub ratio_checks: Vec<RatioCheck>,
}

fn ratio(module: String, s: usize, full: usize, fragments: Vec<usize>) -> RatioCheck {
    let exact = fragments.iter().all(|&f| f * s * s == full);
    RatioCheck {
        module,
        s,
        full_weights: full,
        fragment_weights: fragments,
        exact,
    }
}

fn layout<F>(block: &StGcBlock<F>) -> String {
    match &block.body {
        BlockBody::Fused { .. } => "str".to_string(),
        BlockBody::Separate { spatial, temporal, .. } => {
            let s = match spatial {
                SpatialUnit::Regular(_) => "sgc",
                SpatialUnit::Ms(_) => "ms",
            };
            let t = match temporal {
                TemporalUnit::Regular(_) => "tgc",
                TemporalUnit::Mt(_) => "mt",
            };
            format!("{s}+{t}")
        }
    }
}

fn ratio_checks<F: Real>(name: &str, block: &StGcBlock<F>, out: &mut Vec<RatioCheck>) {
    let k = block.spec.kernel_t;
    match &block.body {
        BlockBody::Separate { spatial, temporal, .. } => {
            if let SpatialUnit::Ms(ms) = spatial {
                let frags = ms.fragments.iter().map(|f| f.weight_count()).collect();
                out.push(ratio(format!("{name}.msgc"), ms.s, 3 * ms.c_out * ms.c_out, frags));
            }
            if let TemporalUnit::Mt(mt) = temporal {
                let frags = mt.fragments.iter().map(|f| f.weight_count()).collect();
                out.push(ratio(format!("{name}.mtgc"), mt.s, mt.channels * mt.channels * k, frags));
            }
        }
        BlockBody::Fused { strgc, .. } => {
            let c = strgc.c_out;
            let spatial = strgc.spatial.iter().map(|f| f.weight_count()).collect();
            out.push(ratio(format!("{name}.strgc.spatial"), strgc.s, 3 * c * c, spatial));
            let temporal = strgc.temporal.iter().map(|f| f.weight_count()).collect();
            out.push(ratio(format!("{name}.strgc.temporal"), strgc.s, c * c * k, temporal));
        }
    }
}

pub(super) fn count<F: Real>(net: &MstGcn<F>) -> ParameterReport {
    let mut groups = BTreeMap::new();
    let mut by_prefix: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, p) in net.params.iter() {
        *groups.entry(p.group.label().to_string()).or_insert(0) += p.numel();
        let prefix = p.name.split('.').next().unwrap_or("");
        *by_prefix.entry(prefix).or_insert(0) += p.numel();
    }
    let mut checks = Vec::new();
    let blocks = net
        .blocks
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let name = format!("block{}", i + 1);
            ratio_checks(&name, block, &mut checks);
            BlockCount {
                total: by_prefix.get(name.as_str()).copied().unwrap_or(0),
                layout: layout(block),
                in_channels: block.spec.in_channels,
                out_channels: block.spec.out_channels,
                stride: block.spec.stride,
                name,
            }
        })
        .collect();
    ParameterReport {
        total: net.params.num_scalars(),
        groups,
        input_bn: by_prefix.get("input_bn").copied().unwrap_or(0),
        blocks,
        classifier: by_prefix.get("classifier").copied().unwrap_or(0),
        ratio_checks: checks,
    }
}

impl fmt::Display for ParameterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total {} ({:.3}M)", self.total, self.total as f64 / 1e6)?;
        for (group, n) in &self.groups {
            writeln!(f, "group {group} {n}")?;
        }
        writeln!(f, "input_bn {}", self.input_bn)?;
        for b in &self.blocks {
            writeln!(
                f,
                "{} {} {}->{} stride {} params {}",
                b.name, b.layout, b.in_channels, b.out_channels, b.stride, b.total
            )?;
        }
        writeln!(f, "classifier {}", self.classifier)?;
        for r in &self.ratio_checks {
            writeln!(
                f,
                "ratio {} s={} full {} fragments {:?} 1/s^2 {}",
                r.module,
                r.s,
                r.full_weights,
                r.fragment_weights,
                if r.exact { "exact" } else { "MISMATCH" }
            )?;
        }
        Ok(())
    }
}
