use std::collections::HashMap;
use std::sync::Arc;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Coarse role of a parameter, used by parameter-count reports and by the
/// receptive-field probe to decide how to neutralize it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Convolution and projection weights.
    Weight,
    /// Learnable additive adjacency masks.
    Mask,
    Bias,
    NormScale,
    NormShift,
    Classifier,
}

impl ParamGroup {
    pub fn label(self) -> &'static str {
        match self {
            ParamGroup::Weight => "weights",
            ParamGroup::Mask => "masks",
            ParamGroup::Bias => "biases",
            ParamGroup::NormScale | ParamGroup::NormShift => "batchnorm",
            ParamGroup::Classifier => "classifier",
        }
    }
}

/// A named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<F> {
    pub name: String,
    pub group: ParamGroup,
    value: Arc<Tensor<F>>,
    grad: Option<Tensor<F>>,
}

impl<F: Real> Parameter<F> {
    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub(crate) fn shared_value(&self) -> Arc<Tensor<F>> {
        Arc::clone(&self.value)
    }

    pub fn grad(&self) -> Option<&Tensor<F>> {
        self.grad.as_ref()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Registry of every trainable tensor of a model, addressed by id or unique name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        value: Tensor<F>,
        group: ParamGroup,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            group,
            value: Arc::new(value),
            grad: None,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim(
                "set_value",
                format!(
                    "{}: expected {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    value.shape()
                ),
            ));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    /// Mutable access to the value buffer, copying it first if a tape still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params[id.0].grad.as_ref()
    }

    /// Gradient of `id`, or zeros when nothing has been accumulated yet.
    pub fn grad_or_zeros(&self, id: ParamId) -> Tensor<F> {
        let p = &self.params[id.0];
        p.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[F]) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => {
                for (a, &v) in acc.data_mut().iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => {
                p.grad = Some(
                    Tensor::new(p.value.shape(), g.to_vec()).expect("gradient shape matches value"),
                );
            }
        }
    }

    pub(crate) fn ensure_grad(&mut self, id: ParamId) {
        let p = &mut self.params[id.0];
        if p.grad.is_none() {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Total count of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    /// Concatenation of every parameter value in registration order.
    pub fn flatten(&self) -> Vec<F> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }
}

/// Handle into [`Buffers`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

/// Named non-trainable state (batch-norm running moments).
#[derive(Clone, Debug, Default)]
pub struct Buffers<F> {
    entries: Vec<(String, Tensor<F>)>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> Buffers<F> {
    pub fn new() -> Self {
        Buffers {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<BufferId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate buffer name {name:?}")));
        }
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push((name, value));
        Ok(BufferId(id))
    }

    pub fn get(&self, id: BufferId) -> &Tensor<F> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: BufferId) -> &mut Tensor<F> {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: BufferId) -> &str {
        &self.entries[id.0].0
    }

    pub fn find(&self, name: &str) -> Option<BufferId> {
        self.by_name.get(name).copied().map(BufferId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (BufferId, &str, &Tensor<F>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (BufferId(i), n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
