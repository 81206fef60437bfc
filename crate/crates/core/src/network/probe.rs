use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MstGcn;
use crate::blocks::{BlockTrace, Ctx};
use crate::error::{Error, Result};
use crate::tensor::{Buffers, Mode, ParamGroup, ParamStore, Real, Tape, Tensor, Var};

/// Which axis an impulse is placed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeAxis {
    /// Impulse at one joint, all frames and channels.
    Spatial,
    /// Impulse at one frame, all joints and channels.
    Temporal,
}

impl FromStr for ProbeAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(ProbeAxis::Spatial),
            "temporal" => Ok(ProbeAxis::Temporal),
            _ => Err(Error::Config(format!("unknown probe axis {s:?} (expected spatial or temporal)"))),
        }
    }
}

impl fmt::Display for ProbeAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeAxis::Spatial => "spatial",
            ProbeAxis::Temporal => "temporal",
        })
    }
}

/// Fragment supports of one unit of a block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnitProbe {
    pub unit: String,
    pub fragments: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockProbe {
    pub name: String,
    pub stride: usize,
    /// Supports with the impulse fed directly to this block.
    pub units: Vec<UnitProbe>,
    /// Block output support with the impulse fed directly to this block.
    pub output: Vec<usize>,
    /// Block output support with the impulse fed to the network input.
    pub cumulative: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProbeReport {
    pub axis: ProbeAxis,
    pub source: usize,
    pub frames: usize,
    pub blocks: Vec<BlockProbe>,
}

/// Copy of the parameters with every weight replaced by its magnitude,
/// masks and biases zeroed, normalization reduced to the identity affine map
/// and running moments reset, so that impulse supports are exact.
pub fn neutralize<F: Real>(params: &ParamStore<F>, buffers: &Buffers<F>) -> (ParamStore<F>, Buffers<F>) {
    let mut p = params.clone();
    let ids: Vec<_> = p.ids().collect();
    for id in ids {
        let group = p.get(id).group;
        let value = p.value_mut(id);
        match group {
            ParamGroup::Weight | ParamGroup::Classifier => value.data_mut().iter_mut().for_each(|v| *v = v.abs()),
            ParamGroup::Mask | ParamGroup::Bias | ParamGroup::NormShift => value.data_mut().fill(F::zero()),
            ParamGroup::NormScale => value.data_mut().fill(F::one()),
        }
    }
    let mut b = buffers.clone();
    let ids: Vec<_> = b.iter().map(|(id, name, _)| (id, name.ends_with("running_var"))).collect();
    for (id, is_var) in ids {
        b.get_mut(id).data_mut().fill(if is_var { F::one() } else { F::zero() });
    }
    (p, b)
}

/// Positions along `axis` of a `[N, C, T, V]` tensor holding any nonzero value.
pub(crate) fn support<F: Real>(t: &Tensor<F>, axis: ProbeAxis) -> Vec<usize> {
    let s = t.shape();
    let (frames, joints) = (s[2], s[3]);
    let extent = match axis {
        ProbeAxis::Spatial => joints,
        ProbeAxis::Temporal => frames,
    };
    let mut hit = vec![false; extent];
    for (i, v) in t.data().iter().enumerate() {
        if *v != F::zero() {
            let pos = match axis {
                ProbeAxis::Spatial => i % joints,
                ProbeAxis::Temporal => (i / joints) % frames,
            };
            hit[pos] = true;
        }
    }
    (0..extent).filter(|&i| hit[i]).collect()
}

fn impulse<F: Real>(shape: &[usize], axis: ProbeAxis, source: usize) -> Tensor<F> {
    let (t_axis, v_axis) = (2, 3);
    Tensor::from_fn(shape, |i| {
        let hit = match axis {
            ProbeAxis::Spatial => i[v_axis] == source,
            ProbeAxis::Temporal => i[t_axis] == source,
        };
        if hit {
            F::one()
        } else {
            F::zero()
        }
    })
}

fn unit_probes<F: Real>(trace: &BlockTrace<F>, axis: ProbeAxis) -> Vec<UnitProbe> {
    [("spatial", &trace.spatial), ("temporal", &trace.temporal), ("fused", &trace.fused)]
        .into_iter()
        .filter(|(_, frags)| !frags.is_empty())
        .map(|(unit, frags)| UnitProbe {
            unit: unit.to_string(),
            fragments: frags.iter().map(|y| support(y.value(), axis)).collect(),
        })
        .collect()
}

pub(super) fn probe_network<F: Real>(
    net: &MstGcn<F>,
    axis: ProbeAxis,
    source: usize,
    frames: usize,
) -> Result<ProbeReport> {
    let v = net.num_joints();
    let limit = match axis {
        ProbeAxis::Spatial => v,
        ProbeAxis::Temporal => frames,
    };
    if source >= limit {
        return Err(Error::Index(format!("probe source {source} outside 0..{limit} on the {axis} axis")));
    }
    let reduction = net.config.temporal_reduction();
    if frames == 0 || frames % reduction != 0 {
        return Err(Error::Config(format!("probe frames {frames} must be a positive multiple of {reduction}")));
    }
    let (params, buffers) = neutralize(&net.params, &net.buffers);
    let tape = Tape::inference();
    let mut cx = Ctx::new(&tape, &params, &buffers, Mode::Eval);

    // Axes 2 and 3 are T and V for both [N, C, T, V] and [N, C, T, V, M].
    let x = impulse::<F>(&[1, net.config.in_channels, frames, v, 1], axis, source);
    let mut traces = Vec::new();
    net.backbone(&mut cx, &Var::constant(x), Some(&mut traces))?;

    let mut blocks = Vec::with_capacity(net.blocks.len());
    for (i, (block, (cumulative, _))) in net.blocks.iter().zip(&traces).enumerate() {
        let input = impulse::<F>(&[1, block.spec.in_channels, frames, v], axis, source);
        let (out, trace) = block.forward_traced(&mut cx, &Var::constant(input))?;
        blocks.push(BlockProbe {
            name: format!("block{}", i + 1),
            stride: block.spec.stride,
            units: unit_probes(&trace, axis),
            output: support(out.value(), axis),
            cumulative: support(cumulative.value(), axis),
        });
    }
    Ok(ProbeReport {
        axis,
        source,
        frames,
        blocks,
    })
}

fn fmt_positions(p: &[usize]) -> String {
    match (p.first(), p.last()) {
        (Some(&a), Some(&b)) if b - a + 1 == p.len() => format!("{a}..={b}"),
        (Some(_), Some(_)) => format!("{p:?}"),
        _ => "none".to_string(),
    }
}

impl fmt::Display for ProbeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "probe axis {} source {} frames {}", self.axis, self.source, self.frames)?;
        for b in &self.blocks {
            for u in &b.units {
                let sizes: Vec<_> = u.fragments.iter().map(Vec::len).collect();
                writeln!(f, "{} {} fragment supports {:?}", b.name, u.unit, sizes)?;
                for (i, frag) in u.fragments.iter().enumerate() {
                    writeln!(f, "{} {} fragment {} positions {}", b.name, u.unit, i + 1, fmt_positions(frag))?;
                }
            }
            writeln!(
                f,
                "{} output isolated {} cumulative {}",
                b.name,
                fmt_positions(&b.output),
                fmt_positions(&b.cumulative)
            )?;
        }
        Ok(())
    }
}
