//! The full MST-GCN: input normalization, ten ST-GC blocks, pooling and a
//! linear classifier.

mod checkpoint;
mod config;
mod count;
mod probe;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Family, NetworkConfig, Preset, CATALOG, DOWNSAMPLE_BLOCKS, NUM_BLOCKS};
pub use count::{BlockCount, ParameterReport, RatioCheck};
pub use probe::{neutralize, BlockProbe, ProbeAxis, ProbeReport, UnitProbe};

use crate::blocks::{BatchNorm, BlockTrace, Builder, Ctx, Linear, StGcBlock};
use crate::error::{Error, Result};
use crate::graph::{PartitionedAdjacency, SkeletonTopology};
use crate::tensor::{BufferId, Buffers, Mode, ParamStore, Real, Tape, Tensor, Var};

/// Running-moment updates produced by a training-mode forward pass.
pub type Updates<F> = Vec<(BufferId, Tensor<F>)>;

/// A built network together with its parameters and running statistics.
#[derive(Clone, Debug)]
pub struct MstGcn<F> {
    pub config: NetworkConfig,
    pub topology: SkeletonTopology,
    pub adjacency: PartitionedAdjacency,
    pub input_bn: BatchNorm,
    pub blocks: Vec<StGcBlock<F>>,
    pub classifier: Linear,
    pub params: ParamStore<F>,
    pub buffers: Buffers<F>,
}

impl<F: Real> MstGcn<F> {
    /// Builds the 10-block network after full validation.
    pub fn build(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        Self::construct(config)
    }

    /// Builds a network of any depth; only structural rules are enforced.
    pub fn build_custom(config: &NetworkConfig) -> Result<Self> {
        config.validate_structure()?;
        Self::construct(config)
    }

    fn construct(config: &NetworkConfig) -> Result<Self> {
        let topology = SkeletonTopology::build(config.topology)?;
        let adjacency = PartitionedAdjacency::with_alpha(&topology, config.normalization, config.alpha)?;
        let mut params = ParamStore::new();
        let mut buffers = Buffers::new();
        let mut b = Builder::new(&mut params, &mut buffers, config.seed);
        let input_bn = BatchNorm::new(&mut b, "input_bn", config.in_channels * topology.num_joints())?;
        let blocks = config
            .blocks
            .iter()
            .enumerate()
            .map(|(i, spec)| StGcBlock::new(&mut b, &format!("block{}", i + 1), spec, &adjacency))
            .collect::<Result<Vec<_>>>()?;
        let classifier = Linear::new(&mut b, "classifier", config.feature_channels(), config.num_classes)?;
        Ok(MstGcn {
            config: config.clone(),
            topology,
            adjacency,
            input_bn,
            blocks,
            classifier,
            params,
            buffers,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.topology.num_joints()
    }

    /// Logits `[N, num_classes]` for input `[N, C, T, V, M]` using the
    /// network's own parameters.
    pub fn forward(&self, tape: &Tape<F>, x: &Var<F>, mode: Mode) -> Result<(Var<F>, Updates<F>)> {
        self.forward_with(tape, &self.params, x, mode)
    }

    /// Like [`forward`](Self::forward) but reading parameters from `params`,
    /// which must share this network's layout.
    pub fn forward_with(
        &self,
        tape: &Tape<F>,
        params: &ParamStore<F>,
        x: &Var<F>,
        mode: Mode,
    ) -> Result<(Var<F>, Updates<F>)> {
        let mut cx = Ctx::new(tape, params, &self.buffers, mode);
        let features = self.backbone(&mut cx, x, None)?;
        let logits = self.head(&mut cx, &features, x.shape()[0], x.shape()[4])?;
        Ok((logits, cx.into_updates()))
    }

    /// Inference-only forward returning plain logits.
    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let tape = Tape::inference();
        let (logits, _) = self.forward(&tape, &Var::constant(x.clone()), Mode::Eval)?;
        Ok(logits.value().clone())
    }

    /// Input normalization followed by the blocks; returns `[N·M, C', T', V]`.
    /// When `traces` is given, each block's output and trace are appended.
    pub(crate) fn backbone(
        &self,
        cx: &mut Ctx<'_, F>,
        x: &Var<F>,
        mut traces: Option<&mut Vec<(Var<F>, BlockTrace<F>)>>,
    ) -> Result<Var<F>> {
        self.check_input(x.shape())?;
        let (n, c, t, v, m) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4]);
        let tape = cx.tape;
        // [N, C, T, V, M] → [N·M, C·V, T]: one normalization channel per (coordinate, joint).
        let h = tape.permute(x, &[0, 4, 1, 3, 2])?;
        let h = tape.reshape(&h, &[n * m, c * v, t])?;
        let h = self.input_bn.forward(cx, &h)?;
        let h = tape.reshape(&h, &[n * m, c, v, t])?;
        let mut h = tape.permute(&h, &[0, 1, 3, 2])?;
        for block in &self.blocks {
            let (out, trace) = block.forward_traced(cx, &h)?;
            if let Some(traces) = traces.as_deref_mut() {
                traces.push((out.clone(), trace));
            }
            h = out;
        }
        Ok(h)
    }

    fn head(&self, cx: &mut Ctx<'_, F>, features: &Var<F>, n: usize, m: usize) -> Result<Var<F>> {
        let tape = cx.tape;
        let pooled = tape.global_avg_pool(features)?;
        let pooled = tape.reshape(&pooled, &[n, m, self.config.feature_channels()])?;
        let pooled = tape.mean_axis(&pooled, 1)?;
        self.classifier.forward(cx, &pooled)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let cfg = &self.config;
        let reduction = cfg.temporal_reduction();
        let ok = shape.len() == 5
            && shape[1] == cfg.in_channels
            && shape[3] == self.num_joints()
            && shape[2] % reduction == 0
            && shape[4] >= 1;
        if ok {
            return Ok(());
        }
        Err(Error::dim(
            "network input",
            format!(
                "expected [N, {}, T, {}, M] with T a multiple of {reduction}, got {shape:?}",
                cfg.in_channels,
                self.num_joints()
            ),
        ))
    }

    /// Writes running-moment updates from a training forward pass.
    pub fn apply_updates(&mut self, updates: Updates<F>) {
        for (id, value) in updates {
            *self.buffers.get_mut(id) = value;
        }
    }

    /// Trainable-scalar breakdown.
    pub fn count_parameters(&self) -> ParameterReport {
        count::count(self)
    }

    /// Impulse-response supports of every block, in isolation and cumulatively.
    pub fn probe_receptive_field(&self, axis: ProbeAxis, source: usize, frames: usize) -> Result<ProbeReport> {
        probe::probe_network(self, axis, source, frames)
    }

    /// Every parameter and running-statistic buffer as named `f32` tensors.
    pub fn checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        let params = self.params.iter().map(|(_, p)| (p.name.clone(), p.value().cast::<f32>()));
        let buffers = self.buffers.iter().map(|(_, name, t)| (name.to_string(), t.cast::<f32>()));
        params.chain(buffers).map(|(name, tensor)| CheckpointEntry { name, tensor }).collect()
    }

    /// Loads values by name; every entry must be present with matching shape.
    pub fn load_checkpoint_entries(&mut self, entries: Vec<CheckpointEntry>) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for CheckpointEntry { name, tensor } in entries {
            let value = tensor.cast::<F>();
            if let Some(id) = self.params.find(&name) {
                self.params.set_value(id, value)?;
            } else if let Some(id) = self.buffers.find(&name) {
                let slot = self.buffers.get_mut(id);
                if slot.shape() != value.shape() {
                    return Err(Error::dim(
                        "checkpoint",
                        format!("{name}: stored {:?}, network {:?}", value.shape(), slot.shape()),
                    ));
                }
                *slot = value;
            } else {
                return Err(Error::Contract(format!("checkpoint entry {name:?} does not exist in this network")));
            }
            seen.insert(name);
        }
        let missing: Vec<_> = self
            .params
            .iter()
            .map(|(_, p)| p.name.clone())
            .chain(self.buffers.iter().map(|(_, n, _)| n.to_string()))
            .filter(|n| !seen.contains(n))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Contract(format!("checkpoint lacks {} entries, e.g. {:?}", missing.len(), missing[0])));
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(file, &self.checkpoint_entries())
    }

    pub fn load_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        self.load_checkpoint_entries(read_checkpoint(file)?)
    }
}
