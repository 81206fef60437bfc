use std::sync::Arc;

use super::{Builder, Ctx};
use crate::error::{Error, Result};
use crate::graph::{PartitionedAdjacency, Subset};
use crate::tensor::{ParamGroup, ParamId, Real, Tensor, Var};

/// Partitioned spatial graph convolution with learnable additive masks:
/// `Y = Σ_p W_p · X · (Â_p + M_p) + b`.
#[derive(Clone, Debug)]
pub struct SpatialGraphConv<F> {
    pub weights: [ParamId; 3],
    pub masks: [ParamId; 3],
    pub bias: ParamId,
    adjacency: [Arc<Tensor<F>>; 3],
    pub c_in: usize,
    pub c_out: usize,
}

impl<F: Real> SpatialGraphConv<F> {
    pub fn new(
        b: &mut Builder<'_, F>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        adjacency: &PartitionedAdjacency,
    ) -> Result<Self> {
        let v = adjacency.num_joints();
        let mut weights = Vec::with_capacity(3);
        let mut masks = Vec::with_capacity(3);
        for subset in Subset::ALL {
            let name = subset.name();
            weights.push(b.weight(format!("{prefix}.w_{name}"), &[c_out, c_in], c_in, ParamGroup::Weight)?);
        }
        for subset in Subset::ALL {
            let name = subset.name();
            masks.push(b.constant(format!("{prefix}.mask_{name}"), &[v, v], 0.0, ParamGroup::Mask)?);
        }
        Ok(SpatialGraphConv {
            weights: weights.try_into().expect("three subsets"),
            masks: masks.try_into().expect("three subsets"),
            bias: b.constant(format!("{prefix}.bias"), &[c_out], 0.0, ParamGroup::Bias)?,
            adjacency: Subset::ALL.map(|s| Arc::new(adjacency.normalized_as(s))),
            c_in,
            c_out,
        })
    }

    pub fn adjacency(&self, subset: Subset) -> &Tensor<F> {
        &self.adjacency[subset as usize]
    }

    pub fn num_joints(&self) -> usize {
        self.adjacency[0].shape()[0]
    }

    pub fn forward(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<Var<F>> {
        if x.shape().len() != 4 || x.shape()[1] != self.c_in {
            return Err(Error::dim(
                "spatial_graph_conv",
                format!("expected [N, {}, T, V], got {:?}", self.c_in, x.shape()),
            ));
        }
        let tape = cx.tape;
        let mut acc: Option<Var<F>> = None;
        for p in 0..3 {
            let graph = tape.add(&Var::shared(Arc::clone(&self.adjacency[p])), &cx.param(self.masks[p]))?;
            let h = tape.graph_contract(x, &graph)?;
            let bias = (p == 0).then(|| cx.param(self.bias));
            let y = tape.pointwise_conv(&h, &cx.param(self.weights[p]), bias.as_ref())?;
            acc = Some(match acc {
                Some(a) => tape.add(&a, &y)?,
                None => y,
            });
        }
        Ok(acc.expect("three subsets"))
    }

    /// Number of scalars in the subset weight matrices.
    pub fn weight_count(&self) -> usize {
        3 * self.c_in * self.c_out
    }
}

/// Temporal graph convolution: a `K_t × 1` convolution along the frame axis.
///
/// This stands in for aggregation over the temporal window of `K_t` frames
/// around each joint, with one weight per relative frame offset; the window
/// partition is never materialized as `T × T` matrices.
#[derive(Clone, Debug)]
pub struct TemporalGraphConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl TemporalGraphConv {
    pub fn new<F: Real>(
        b: &mut Builder<'_, F>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("temporal kernel size must be odd, got {kernel}")));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!("temporal stride must be 1 or 2, got {stride}")));
        }
        Ok(TemporalGraphConv {
            weight: b.weight(format!("{prefix}.weight"), &[c_out, c_in, kernel], c_in * kernel, ParamGroup::Weight)?,
            bias: b.constant(format!("{prefix}.bias"), &[c_out], 0.0, ParamGroup::Bias)?,
            c_in,
            c_out,
            kernel,
            stride,
        })
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<Var<F>> {
        let (w, b) = (cx.param(self.weight), cx.param(self.bias));
        cx.tape.temporal_conv(x, &w, Some(&b), self.stride)
    }

    pub fn weight_count(&self) -> usize {
        self.c_in * self.c_out * self.kernel
    }
}
