use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Classification quality over a set of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
    pub samples: usize,
    /// `confusion[label][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    /// Metrics from per-sample class probabilities `[N, K]`; the loss is the
    /// mean negative log-probability of the true class.
    pub fn from_scores(scores: &Tensor<f64>, labels: &[usize]) -> Result<Self> {
        let top1 = topk_accuracy(scores, labels, 1)?;
        let k = scores.shape()[1];
        let top5 = topk_accuracy(scores, labels, 5.min(k))?;
        let mut confusion = vec![vec![0; k]; k];
        let mut nll = 0.0;
        for (row, &label) in scores.data().chunks(k).zip(labels) {
            confusion[label][argmax(row)] += 1;
            nll -= row[label].max(f64::MIN_POSITIVE).ln();
        }
        Ok(Metrics {
            top1,
            top5,
            loss: nll / labels.len().max(1) as f64,
            samples: labels.len(),
            confusion,
        })
    }
}

/// Index of the largest score; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of rows whose label ranks among the `k` largest scores, ties
/// resolved in favor of the lower class index.
pub fn topk_accuracy(scores: &Tensor<f64>, labels: &[usize], k: usize) -> Result<f64> {
    if scores.rank() != 2 || scores.shape()[0] != labels.len() {
        return Err(Error::dim(
            "topk_accuracy",
            format!("scores {:?} for {} labels", scores.shape(), labels.len()),
        ));
    }
    let classes = scores.shape()[1];
    if k == 0 || k > classes {
        return Err(Error::Contract(format!("k = {k} outside 1..={classes}")));
    }
    let mut hits = 0;
    for (i, (row, &label)) in scores.data().chunks(classes).zip(labels).enumerate() {
        if label >= classes {
            return Err(Error::Index(format!("label {label} of sample {i} >= {classes} classes")));
        }
        let s = row[label];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > s || (v == s && j < label))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Unweighted mean of score matrices of identical shape.
pub fn fuse_scores(matrices: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let Some(first) = matrices.first() else {
        return Err(Error::Contract("nothing to fuse".into()));
    };
    for m in matrices {
        if m.shape() != first.shape() {
            return Err(Error::dim(
                "fuse_scores",
                format!("{:?} vs {:?}", m.shape(), first.shape()),
            ));
        }
    }
    let n = matrices.len() as f64;
    let mut out = vec![0.0; first.numel()];
    for m in matrices {
        for (o, &v) in out.iter_mut().zip(m.data()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    Tensor::new(first.shape(), out)
}

/// Per-sample class probabilities with their labels, as exchanged between
/// evaluation runs and the fusion step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFile {
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ScoreFile {
    pub fn new(scores: &Tensor<f64>, labels: &[usize]) -> Self {
        let k = scores.shape()[1];
        ScoreFile {
            scores: scores.data().chunks(k).map(<[f64]>::to_vec).collect(),
            labels: labels.to_vec(),
        }
    }

    pub fn matrix(&self) -> Result<Tensor<f64>> {
        let k = self.scores.first().map_or(0, Vec::len);
        if self.scores.len() != self.labels.len() || self.scores.iter().any(|r| r.len() != k) || k == 0 {
            return Err(Error::dim(
                "score file",
                format!("{} rows for {} labels, or ragged/empty rows", self.scores.len(), self.labels.len()),
            ));
        }
        Tensor::new(&[self.scores.len(), k], self.scores.concat())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Contract(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: 0,
            message: format!("{}: {e}", path.display()),
        })
    }
}
