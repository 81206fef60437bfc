//! Graph convolution layers and the multi-scale modules built from them.

mod block;
mod layers;
mod multiscale;
mod units;

pub use block::{BlockBody, BlockSpec, BlockTrace, FusedKind, Residual, SpatialKind, SpatialUnit, StGcBlock, TemporalKind, TemporalUnit};
pub use layers::{BatchNorm, Linear, Pointwise};
pub use multiscale::{MsGc, MtGc, StrGc};
pub use units::{SpatialGraphConv, TemporalGraphConv};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{BufferId, Buffers, Mode, ParamGroup, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Default temporal kernel size.
pub const DEFAULT_KERNEL_T: usize = 9;

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a, F> {
    pub tape: &'a Tape<F>,
    pub params: &'a ParamStore<F>,
    pub buffers: &'a Buffers<F>,
    pub mode: Mode,
    updates: Vec<(BufferId, Tensor<F>)>,
}

impl<'a, F: Real> Ctx<'a, F> {
    pub fn new(tape: &'a Tape<F>, params: &'a ParamStore<F>, buffers: &'a Buffers<F>, mode: Mode) -> Self {
        Ctx {
            tape,
            params,
            buffers,
            mode,
            updates: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Var<F> {
        self.tape.param(self.params, id)
    }

    pub(crate) fn push_update(&mut self, id: BufferId, value: Tensor<F>) {
        self.updates.push((id, value));
    }

    /// Running-moment updates collected by training-mode batch norms, in
    /// the order they were produced.
    pub fn into_updates(self) -> Vec<(BufferId, Tensor<F>)> {
        self.updates
    }
}

/// Registers parameters with deterministic seeded initialization.
pub struct Builder<'a, F> {
    pub params: &'a mut ParamStore<F>,
    pub buffers: &'a mut Buffers<F>,
    rng: ChaCha8Rng,
}

impl<'a, F: Real> Builder<'a, F> {
    pub fn new(params: &'a mut ParamStore<F>, buffers: &'a mut Buffers<F>, seed: u64) -> Self {
        Builder {
            params,
            buffers,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `U(−1/√fan_in, 1/√fan_in)` initialized weight.
    pub fn weight(&mut self, name: String, shape: &[usize], fan_in: usize, group: ParamGroup) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let value = Tensor::from_fn(shape, |_| F::from_f64(rng.random_range(-bound..bound)));
        self.params.register(name, value, group)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64, group: ParamGroup) -> Result<ParamId> {
        self.params.register(name, Tensor::full(shape, F::from_f64(value)), group)
    }

    pub fn buffer(&mut self, name: String, value: Tensor<F>) -> Result<BufferId> {
        self.buffers.register(name, value)
    }
}
