use std::cell::RefCell;
use std::sync::Arc;

use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Gradient of one operation: given the upstream gradient and which inputs
/// need a gradient, returns one optional gradient per input.
pub(crate) type BackwardFn<F> = Box<dyn Fn(&[F], &[bool]) -> Vec<Option<Vec<F>>>>;

struct Node<F> {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<F>>,
    param: Option<ParamId>,
}

/// A value flowing through the forward pass.
///
/// `node` is set only when the value depends on a parameter and was produced
/// on a recording tape; everything else is a constant.
#[derive(Clone)]
pub struct Var<F> {
    value: Arc<Tensor<F>>,
    node: Option<usize>,
}

impl<F: Real> Var<F> {
    pub fn constant(value: Tensor<F>) -> Self {
        Var {
            value: Arc::new(value),
            node: None,
        }
    }

    pub(crate) fn shared(value: Arc<Tensor<F>>) -> Self {
        Var { value, node: None }
    }

    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub(crate) fn arc(&self) -> Arc<Tensor<F>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[F] {
        self.value.data()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }
}

impl<F: Real> std::fmt::Debug for Var<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

/// Operation record for one forward pass.
///
/// An inference tape records nothing, so intermediates are freed as soon as
/// the forward pass drops them.
pub struct Tape<F> {
    recording: bool,
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Real> Tape<F> {
    /// A tape that records operations for a later [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            recording: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A tape that records nothing; every op returns a constant.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads a parameter into the forward pass as a differentiable leaf.
    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Var<F> {
        let value = store.get(id).shared_value();
        if !self.recording {
            return Var::shared(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: Vec::new(),
            backward: None,
            param: Some(id),
        });
        Var {
            value,
            node: Some(nodes.len() - 1),
        }
    }

    /// Wraps an op result, recording its backward closure if any input is tracked.
    pub(crate) fn record(
        &self,
        value: Tensor<F>,
        inputs: &[&Var<F>],
        backward: impl Fn(&[F], &[bool]) -> Vec<Option<Vec<F>>> + 'static,
    ) -> Var<F> {
        #[cfg(debug_assertions)]
        if inputs.iter().all(|v| v.value.all_finite()) {
            debug_assert!(value.all_finite(), "engine op produced a non-finite value");
        }
        let tracked = self.recording && inputs.iter().any(|v| v.node.is_some());
        if !tracked {
            return Var::constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: inputs.iter().map(|v| v.node).collect(),
            backward: Some(Box::new(backward)),
            param: None,
        });
        Var {
            value: Arc::new(value),
            node: Some(nodes.len() - 1),
        }
    }

    /// Back-propagates from a scalar `loss` and accumulates `∂loss/∂p` into
    /// every parameter read on this tape. Consumes the tape.
    pub fn backward(self, loss: &Var<F>, store: &mut ParamStore<F>) -> Result<()> {
        if loss.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.into_inner();
        for node in &nodes {
            if let Some(id) = node.param {
                store.ensure_grad(id);
            }
        }
        let Some(root) = loss.node else {
            return Ok(());
        };
        if root >= nodes.len() {
            return Err(Error::Contract("loss was recorded on a different tape".into()));
        }

        let mut grads: Vec<Option<Vec<F>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(vec![F::one()]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if let Some(id) = node.param {
                store.accumulate_grad(id, &g);
            }
            let Some(backward) = &node.backward else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(j), Some(ig)) = (input, ig) else { continue };
                match &mut grads[*j] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(ig) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}
