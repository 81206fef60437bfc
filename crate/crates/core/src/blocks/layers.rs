use super::{Builder, Ctx};
use crate::error::Result;
use crate::tensor::{BufferId, ParamGroup, ParamId, Real, Tensor, Var};

/// Learned 1×1 channel projection.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Pointwise {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, prefix: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Pointwise {
            weight: b.weight(format!("{prefix}.weight"), &[c_out, c_in], c_in, ParamGroup::Weight)?,
            bias: b.constant(format!("{prefix}.bias"), &[c_out], 0.0, ParamGroup::Bias)?,
            c_in,
            c_out,
        })
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<Var<F>> {
        let (w, b) = (cx.param(self.weight), cx.param(self.bias));
        cx.tape.pointwise_conv(x, &w, Some(&b))
    }
}

/// Batch norm with learnable scale/shift and running moments.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
    axis: usize,
}

impl BatchNorm {
    /// Normalizes axis 1 of its input.
    pub fn new<F: Real>(b: &mut Builder<'_, F>, prefix: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            scale: b.constant(format!("{prefix}.scale"), &[channels], 1.0, ParamGroup::NormScale)?,
            shift: b.constant(format!("{prefix}.shift"), &[channels], 0.0, ParamGroup::NormShift)?,
            running_mean: b.buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: b.buffer(format!("{prefix}.running_var"), Tensor::ones(&[channels]))?,
            channels,
            axis: 1,
        })
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<Var<F>> {
        let (scale, shift) = (cx.param(self.scale), cx.param(self.shift));
        let (out, update) = cx.tape.batch_norm(
            x,
            self.axis,
            &scale,
            &shift,
            cx.buffers.get(self.running_mean),
            cx.buffers.get(self.running_var),
            cx.mode,
        )?;
        if let Some(u) = update {
            cx.push_update(self.running_mean, u.mean);
            cx.push_update(self.running_var, u.var);
        }
        Ok(out)
    }
}

/// Fully connected classifier head.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Linear {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, prefix: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Linear {
            weight: b.weight(format!("{prefix}.weight"), &[c_out, c_in], c_in, ParamGroup::Classifier)?,
            bias: b.constant(format!("{prefix}.bias"), &[c_out], 0.0, ParamGroup::Classifier)?,
            c_in,
            c_out,
        })
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Var<F>) -> Result<Var<F>> {
        let (w, b) = (cx.param(self.weight), cx.param(self.bias));
        cx.tape.linear(x, &w, &b)
    }
}
