//! Skeleton sequences: the SKL1 file format, preprocessing, stream
//! derivation and a synthetic generator.

mod format;
mod preprocess;
mod synthetic;

pub use format::{
    load_dataset, read_dataset, save_dataset, write_dataset, DatasetManifest, DATASET_MAGIC, DATASET_VERSION,
    HEADER_BYTES, SAMPLE_HEADER_BYTES,
};
pub use preprocess::{
    crop_window, derive_stream, normalize_center, pad_replay, person_energy, select_top2_persons, CropMode, Pipeline,
    StreamKind, DEFAULT_PAD_FRAMES, DEFAULT_WINDOW,
};
pub use synthetic::{generate_synthetic, SyntheticSpec, MAX_SYNTHETIC_CLASSES};

use crate::error::{Error, Result};
use crate::graph::TopologyKind;
use crate::tensor::{Real, Tensor};

/// One recorded action: coordinates `[C, T, V, M]` and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub values: Tensor<f32>,
    pub label: usize,
    /// Leading frames that hold real data; the rest are zero.
    pub valid_frames: usize,
}

impl SkeletonSequence {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn persons(&self) -> usize {
        self.values.shape()[3]
    }

    pub(crate) fn validate(&self, index: usize) -> Result<()> {
        let bad = |message: String| Err(Error::Data { index, message });
        if self.values.rank() != 4 {
            return bad(format!("expected [C, T, V, M] values, got {:?}", self.values.shape()));
        }
        if self.valid_frames == 0 || self.valid_frames > self.frames() {
            return bad(format!("valid_frames {} outside 1..={}", self.valid_frames, self.frames()));
        }
        Ok(())
    }
}

/// Labelled sequences over one topology.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub topology: TopologyKind,
    pub samples: Vec<SkeletonSequence>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Checks every label against the class count.
    pub fn validate(&self) -> Result<()> {
        for (index, s) in self.samples.iter().enumerate() {
            s.validate(index)?;
            if s.label >= self.num_classes {
                return Err(Error::Data {
                    index,
                    message: format!("label {} >= {} classes", s.label, self.num_classes),
                });
            }
        }
        Ok(())
    }

    /// Stacks the selected samples into `[N, C, T, V, M]`.
    pub fn batch<F: Real>(&self, indices: &[usize]) -> Result<(Tensor<F>, Vec<usize>)> {
        stack(indices.iter().map(|&i| (i, &self.samples[i])))
    }
}

/// Stacks sequences of identical shape into `[N, C, T, V, M]`; the index in
/// each pair is only used in error messages.
pub fn stack<'a, F: Real>(
    items: impl IntoIterator<Item = (usize, &'a SkeletonSequence)>,
) -> Result<(Tensor<F>, Vec<usize>)> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    for (index, seq) in items {
        match &shape {
            None => shape = Some(seq.values.shape().to_vec()),
            Some(s) if s != seq.values.shape() => {
                return Err(Error::Data {
                    index,
                    message: format!("shape {:?} differs from batch shape {s:?}", seq.values.shape()),
                })
            }
            Some(_) => {}
        }
        data.extend(seq.values.data().iter().map(|&v| F::from_f64(v as f64)));
        labels.push(seq.label);
    }
    let Some(inner) = shape else {
        return Err(Error::Contract("cannot stack an empty batch".into()));
    };
    let mut full = vec![labels.len()];
    full.extend(inner);
    Ok((Tensor::new(&full, data)?, labels))
}
