use super::{Builder, Ctx, Pointwise, SpatialGraphConv, TemporalGraphConv};
use crate::error::{Error, Result};
use crate::graph::PartitionedAdjacency;
use crate::tensor::{Real, Var};

const CHANNEL_AXIS: usize = 1;
const TIME_AXIS: usize = 2;

fn check_split(module: &str, channels: usize, s: usize) -> Result<()> {
    if s == 0 || channels % s != 0 {
        return Err(Error::Config(format!(
            "{module}: {channels} channels are not divisible into {s} fragments"
        )));
    }
    Ok(())
}

/// Adds `prev` to `x` when present; the hierarchical link between fragments.
fn link<F: Real>(cx: &Ctx<'_, F>, x: &Var<F>, prev: Option<&Var<F>>) -> Result<Var<F>> {
    match prev {
        Some(p) => cx.tape.add(x, p),
        None => Ok(x.clone()),
    }
}

/// Multi-scale spatial graph convolution.
///
/// Channels are split into `s` fragments; fragment `i > 1` sees its own slice
/// plus the previous fragment's output, so its receptive field grows by one
/// hop per step. Output is `ReLU(concat(y_1..y_s) + R(x))`.
///
/// When the channel count changes, `R` is a learned pointwise projection and
/// the fragments split `R(x)` rather than `x`, so every fragment maps
/// `C'/s → C'/s` and the hierarchical sums stay well-typed.
#[derive(Clone, Debug)]
pub struct MsGc<F> {
    pub fragments: Vec<SpatialGraphConv<F>>,
    pub projection: Option<Pointwise>,
    pub c_in: usize,
    pub c_out: usize,
    pub s: usize,
}

impl<F: Real> MsGc<F> {
    pub fn new(
        b: &mut Builder<'_, F>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        s: usize,
        adjacency: &PartitionedAdjacency,
    ) -> Result<Self> {
        check_split("MS-GC", c_in, s)?;
        check_split("MS-GC", c_out, s)?;
        let projection = (c_in != c_out)
            .then(|| Pointwise::new(b, &format!("{prefix}.proj"), c_in, c_out))
            .transpose()?;
        let width = c_out / s;
        let fragments = (1..=s)
            .map(|i| SpatialGraphConv::new(b, &format!("{prefix}.frag{i}"), width, width, adjacency))
            .collect::<Result<_>>()?;
        Ok(MsGc {
            fragments,
            projection,
            c_in,
            c_out,
            s,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<Var<F>> {
        Ok(self.forward_fragments(cx, x)?.0)
    }

    /// Module output together with the per-fragment outputs `y_i`.
    pub fn forward_fragments(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<(Var<F>, Vec<Var<F>>)> {
        let base = match &self.projection {
            Some(p) => p.forward(cx, x)?,
            None => x.clone(),
        };
        let parts = cx.tape.chunk(&base, self.s, CHANNEL_AXIS)?;
        let mut ys: Vec<Var<F>> = Vec::with_capacity(self.s);
        for (frag, part) in self.fragments.iter().zip(&parts) {
            let input = link(cx, part, ys.last())?;
            ys.push(frag.forward(cx, &input)?);
        }
        let cat = cx.tape.concat(&ys, CHANNEL_AXIS)?;
        let out = cx.tape.relu(&cx.tape.add(&cat, &base)?);
        Ok((out, ys))
    }
}

/// Multi-scale temporal graph convolution: the temporal analogue of
/// [`MsGc`], with plain concatenation (no outer residual, no activation).
///
/// Only the first fragment applies the module stride; later slices are
/// subsampled in time before joining the hierarchy and convolve at stride 1.
#[derive(Clone, Debug)]
pub struct MtGc {
    pub fragments: Vec<TemporalGraphConv>,
    pub channels: usize,
    pub s: usize,
    pub stride: usize,
}

impl MtGc {
    pub fn new<F: Real>(
        b: &mut Builder<'_, F>,
        prefix: &str,
        channels: usize,
        s: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        check_split("MT-GC", channels, s)?;
        let width = channels / s;
        let fragments = (1..=s)
            .map(|i| {
                let frag_stride = if i == 1 { stride } else { 1 };
                TemporalGraphConv::new(b, &format!("{prefix}.frag{i}"), width, width, kernel, frag_stride)
            })
            .collect::<Result<_>>()?;
        Ok(MtGc {
            fragments,
            channels,
            s,
            stride,
        })
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<Var<F>> {
        Ok(self.forward_fragments(cx, x)?.0)
    }

    pub fn forward_fragments<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<(Var<F>, Vec<Var<F>>)> {
        let parts = cx.tape.chunk(x, self.s, CHANNEL_AXIS)?;
        let mut ys: Vec<Var<F>> = Vec::with_capacity(self.s);
        for (i, (frag, part)) in self.fragments.iter().zip(&parts).enumerate() {
            let part = if i > 0 && self.stride > 1 {
                cx.tape.subsample(part, TIME_AXIS, self.stride)?
            } else {
                part.clone()
            };
            let input = link(cx, &part, ys.last())?;
            ys.push(frag.forward(cx, &input)?);
        }
        Ok((cx.tape.concat(&ys, CHANNEL_AXIS)?, ys))
    }
}

/// Fused spatial-temporal residual module: each fragment runs a spatial then
/// a temporal sub-convolution, `y_i = T_i(G_i(x_i + y_{i−1}))`, and the
/// fragment outputs are concatenated.
///
/// Channel changes and strides follow the same rules as [`MsGc`] and [`MtGc`].
#[derive(Clone, Debug)]
pub struct StrGc<F> {
    pub spatial: Vec<SpatialGraphConv<F>>,
    pub temporal: Vec<TemporalGraphConv>,
    pub projection: Option<Pointwise>,
    pub c_in: usize,
    pub c_out: usize,
    pub s: usize,
    pub stride: usize,
}

impl<F: Real> StrGc<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder<'_, F>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        s: usize,
        kernel: usize,
        stride: usize,
        adjacency: &PartitionedAdjacency,
    ) -> Result<Self> {
        check_split("STR-GC", c_in, s)?;
        check_split("STR-GC", c_out, s)?;
        let projection = (c_in != c_out)
            .then(|| Pointwise::new(b, &format!("{prefix}.proj"), c_in, c_out))
            .transpose()?;
        let width = c_out / s;
        let mut spatial = Vec::with_capacity(s);
        let mut temporal = Vec::with_capacity(s);
        for i in 1..=s {
            let frag = format!("{prefix}.frag{i}");
            spatial.push(SpatialGraphConv::new(b, &format!("{frag}.spatial"), width, width, adjacency)?);
            let frag_stride = if i == 1 { stride } else { 1 };
            temporal.push(TemporalGraphConv::new(
                b,
                &format!("{frag}.temporal"),
                width,
                width,
                kernel,
                frag_stride,
            )?);
        }
        Ok(StrGc {
            spatial,
            temporal,
            projection,
            c_in,
            c_out,
            s,
            stride,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<Var<F>> {
        Ok(self.forward_fragments(cx, x)?.0)
    }

    pub fn forward_fragments(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<(Var<F>, Vec<Var<F>>)> {
        let base = match &self.projection {
            Some(p) => p.forward(cx, x)?,
            None => x.clone(),
        };
        let parts = cx.tape.chunk(&base, self.s, CHANNEL_AXIS)?;
        let mut ys: Vec<Var<F>> = Vec::with_capacity(self.s);
        for (i, part) in parts.iter().enumerate() {
            let part = if i > 0 && self.stride > 1 {
                cx.tape.subsample(part, TIME_AXIS, self.stride)?
            } else {
                part.clone()
            };
            let input = link(cx, &part, ys.last())?;
            let g = self.spatial[i].forward(cx, &input)?;
            ys.push(self.temporal[i].forward(cx, &g)?);
        }
        Ok((cx.tape.concat(&ys, CHANNEL_AXIS)?, ys))
    }
}
