use serde::{Deserialize, Serialize};

use super::{BatchNorm, Builder, Ctx, MsGc, MtGc, Pointwise, SpatialGraphConv, StrGc, TemporalGraphConv, DEFAULT_KERNEL_T};
use crate::error::{Error, Result};
use crate::graph::PartitionedAdjacency;
use crate::tensor::{Real, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialKind {
    #[default]
    Regular,
    Ms,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalKind {
    #[default]
    Regular,
    Mt,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusedKind {
    #[default]
    None,
    Str,
}

fn default_one() -> usize {
    1
}

fn default_kernel() -> usize {
    DEFAULT_KERNEL_T
}

fn default_true() -> bool {
    true
}

/// Declarative description of one ST-GC block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    #[serde(default)]
    pub spatial_kind: SpatialKind,
    #[serde(default)]
    pub temporal_kind: TemporalKind,
    #[serde(default)]
    pub fused: FusedKind,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "default_one")]
    pub s: usize,
    #[serde(default = "default_kernel")]
    pub kernel_t: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_true")]
    pub has_residual: bool,
}

impl BlockSpec {
    /// Plain SGC + TGC block.
    pub fn regular(in_channels: usize, out_channels: usize, stride: usize, has_residual: bool) -> Self {
        BlockSpec {
            spatial_kind: SpatialKind::Regular,
            temporal_kind: TemporalKind::Regular,
            fused: FusedKind::None,
            in_channels,
            out_channels,
            s: 1,
            kernel_t: DEFAULT_KERNEL_T,
            stride,
            has_residual,
        }
    }

    pub fn is_multiscale(&self) -> bool {
        self.fused == FusedKind::Str || self.spatial_kind == SpatialKind::Ms || self.temporal_kind == TemporalKind::Mt
    }

    /// Every rule this spec violates, as readable messages.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.in_channels == 0 || self.out_channels == 0 {
            out.push("channel counts must be positive".to_string());
        }
        if self.s == 0 {
            out.push("s must be at least 1".to_string());
        }
        if self.kernel_t % 2 == 0 {
            out.push(format!("kernel_t must be odd, got {}", self.kernel_t));
        }
        if !(1..=2).contains(&self.stride) {
            out.push(format!("stride must be 1 or 2, got {}", self.stride));
        }
        if self.fused == FusedKind::Str
            && (self.spatial_kind != SpatialKind::Regular || self.temporal_kind != TemporalKind::Regular)
        {
            out.push("fused \"str\" excludes separate spatial/temporal kinds".to_string());
        }
        if self.s > 0 {
            let multiscale_in = self.fused == FusedKind::Str || self.spatial_kind == SpatialKind::Ms;
            if multiscale_in && self.in_channels % self.s != 0 {
                out.push(format!("in_channels {} not divisible by s={}", self.in_channels, self.s));
            }
            if self.is_multiscale() && self.out_channels % self.s != 0 {
                out.push(format!("out_channels {} not divisible by s={}", self.out_channels, self.s));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Output temporal length for an input of length `t`.
    pub fn output_frames(&self, t: usize) -> usize {
        (t + self.stride - 1) / self.stride
    }
}

#[derive(Clone, Debug)]
pub enum SpatialUnit<F> {
    Regular(SpatialGraphConv<F>),
    Ms(MsGc<F>),
}

impl<F: Real> SpatialUnit<F> {
    pub fn forward_fragments(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<(Var<F>, Vec<Var<F>>)> {
        match self {
            SpatialUnit::Regular(u) => {
                let y = u.forward(cx, x)?;
                Ok((y.clone(), vec![y]))
            }
            SpatialUnit::Ms(u) => u.forward_fragments(cx, x),
        }
    }
}

#[derive(Clone, Debug)]
pub enum TemporalUnit {
    Regular(TemporalGraphConv),
    Mt(MtGc),
}

impl TemporalUnit {
    pub fn forward_fragments<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<(Var<F>, Vec<Var<F>>)> {
        match self {
            TemporalUnit::Regular(u) => {
                let y = u.forward(cx, x)?;
                Ok((y.clone(), vec![y]))
            }
            TemporalUnit::Mt(u) => u.forward_fragments(cx, x),
        }
    }
}

/// Main path of a block.
#[derive(Clone, Debug)]
pub enum BlockBody<F> {
    /// spatial → BN → ReLU → temporal → BN
    Separate {
        spatial: SpatialUnit<F>,
        spatial_bn: BatchNorm,
        temporal: TemporalUnit,
        temporal_bn: BatchNorm,
    },
    /// STR-GC → BN
    Fused { strgc: StrGc<F>, bn: BatchNorm },
}

/// Skip path of a block.
#[derive(Clone, Debug)]
pub enum Residual {
    None,
    Identity,
    /// Temporal subsampling by `stride` followed by a pointwise projection.
    Projection { proj: Pointwise, stride: usize },
}

/// Intermediate outputs recorded by [`StGcBlock::forward_traced`].
pub struct BlockTrace<F> {
    /// Spatial fragment outputs (one entry for a regular unit).
    pub spatial: Vec<Var<F>>,
    /// Temporal fragment outputs (one entry for a regular unit).
    pub temporal: Vec<Var<F>>,
    /// STR-GC fragment outputs; empty for separate bodies.
    pub fused: Vec<Var<F>>,
}

/// One ST-GC block: main path plus optional residual, then ReLU.
#[derive(Clone, Debug)]
pub struct StGcBlock<F> {
    pub spec: BlockSpec,
    pub body: BlockBody<F>,
    pub residual: Residual,
}

impl<F: Real> StGcBlock<F> {
    pub fn new(b: &mut Builder<'_, F>, prefix: &str, spec: &BlockSpec, adjacency: &PartitionedAdjacency) -> Result<Self> {
        spec.validate()?;
        let (c_in, c_out, s) = (spec.in_channels, spec.out_channels, spec.s);
        let body = match spec.fused {
            FusedKind::Str => BlockBody::Fused {
                strgc: StrGc::new(b, &format!("{prefix}.strgc"), c_in, c_out, s, spec.kernel_t, spec.stride, adjacency)?,
                bn: BatchNorm::new(b, &format!("{prefix}.bn"), c_out)?,
            },
            FusedKind::None => {
                let spatial = match spec.spatial_kind {
                    SpatialKind::Regular => {
                        SpatialUnit::Regular(SpatialGraphConv::new(b, &format!("{prefix}.sgc"), c_in, c_out, adjacency)?)
                    }
                    SpatialKind::Ms => SpatialUnit::Ms(MsGc::new(b, &format!("{prefix}.msgc"), c_in, c_out, s, adjacency)?),
                };
                let spatial_bn = BatchNorm::new(b, &format!("{prefix}.bn1"), c_out)?;
                let temporal = match spec.temporal_kind {
                    TemporalKind::Regular => TemporalUnit::Regular(TemporalGraphConv::new(
                        b,
                        &format!("{prefix}.tgc"),
                        c_out,
                        c_out,
                        spec.kernel_t,
                        spec.stride,
                    )?),
                    TemporalKind::Mt => {
                        TemporalUnit::Mt(MtGc::new(b, &format!("{prefix}.mtgc"), c_out, s, spec.kernel_t, spec.stride)?)
                    }
                };
                let temporal_bn = BatchNorm::new(b, &format!("{prefix}.bn2"), c_out)?;
                BlockBody::Separate {
                    spatial,
                    spatial_bn,
                    temporal,
                    temporal_bn,
                }
            }
        };
        let residual = if !spec.has_residual {
            Residual::None
        } else if c_in == c_out && spec.stride == 1 {
            Residual::Identity
        } else {
            Residual::Projection {
                proj: Pointwise::new(b, &format!("{prefix}.residual"), c_in, c_out)?,
                stride: spec.stride,
            }
        };
        Ok(StGcBlock {
            spec: spec.clone(),
            body,
            residual,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<Var<F>> {
        Ok(self.forward_traced(cx, x)?.0)
    }

    pub fn forward_traced(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<(Var<F>, BlockTrace<F>)> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(Error::dim(
                "block",
                format!("expected [N, {}, T, V], got {shape:?}", self.spec.in_channels),
            ));
        }
        let mut trace = BlockTrace {
            spatial: Vec::new(),
            temporal: Vec::new(),
            fused: Vec::new(),
        };
        let main = match &self.body {
            BlockBody::Separate {
                spatial,
                spatial_bn,
                temporal,
                temporal_bn,
            } => {
                let (h, frags) = spatial.forward_fragments(cx, x)?;
                trace.spatial = frags;
                let h = spatial_bn.forward(cx, &h)?;
                let h = cx.tape.relu(&h);
                let (h, frags) = temporal.forward_fragments(cx, &h)?;
                trace.temporal = frags;
                temporal_bn.forward(cx, &h)?
            }
            BlockBody::Fused { strgc, bn } => {
                let (h, frags) = strgc.forward_fragments(cx, x)?;
                trace.fused = frags;
                bn.forward(cx, &h)?
            }
        };
        let out = match &self.residual {
            Residual::None => main,
            Residual::Identity => cx.tape.add(&main, x)?,
            Residual::Projection { proj, stride } => {
                let skip = if *stride > 1 {
                    cx.tape.subsample(x, 2, *stride)?
                } else {
                    x.clone()
                };
                cx.tape.add(&main, &proj.forward(cx, &skip)?)?
            }
        };
        Ok((cx.tape.relu(&out), trace))
    }
}
