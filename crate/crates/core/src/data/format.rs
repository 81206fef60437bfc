use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Dataset, SkeletonSequence};
use crate::error::{Error, Result};
use crate::graph::TopologyKind;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"SKL1";
pub const DATASET_VERSION: u32 = 1;
/// Magic plus four `u32` header fields.
pub const HEADER_BYTES: u64 = 20;
/// Six `u32` per-sample fields.
pub const SAMPLE_HEADER_BYTES: u64 = 24;

/// Header-level description of a dataset file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub num_samples: usize,
    pub num_classes: usize,
    pub topology: TopologyKind,
    /// Byte offset of each sample record from the start of the file.
    pub offsets: Vec<u64>,
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Contract(format!("{what} {n} exceeds the dataset format range")))
}

/// Writes a dataset and returns its manifest.
pub fn write_dataset<W: Write>(mut w: W, dataset: &Dataset) -> Result<DatasetManifest> {
    w.write_all(&DATASET_MAGIC)?;
    for field in [
        DATASET_VERSION,
        to_u32(dataset.samples.len(), "sample count")?,
        to_u32(dataset.num_classes, "class count")?,
        dataset.topology.code(),
    ] {
        w.write_all(&field.to_le_bytes())?;
    }
    let mut offset = HEADER_BYTES;
    let mut offsets = Vec::with_capacity(dataset.samples.len());
    for (index, seq) in dataset.samples.iter().enumerate() {
        seq.validate(index)?;
        offsets.push(offset);
        let s = seq.values.shape();
        for field in [seq.label, s[0], s[1], s[2], s[3], seq.valid_frames] {
            w.write_all(&to_u32(field, "sample field")?.to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(4 * seq.values.numel());
        for v in seq.values.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        offset += SAMPLE_HEADER_BYTES + bytes.len() as u64;
    }
    w.flush()?;
    Ok(DatasetManifest {
        num_samples: dataset.samples.len(),
        num_classes: dataset.num_classes,
        topology: dataset.topology,
        offsets,
    })
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => Err(Error::Format {
                offset: self.offset,
                message: format!("truncated while reading {what}"),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b) as usize)
    }
}

fn format_error<T>(offset: u64, message: String) -> Result<T> {
    Err(Error::Format { offset, message })
}

/// Parses a complete dataset.
pub fn read_dataset<R: Read>(r: R) -> Result<(DatasetManifest, Dataset)> {
    let mut rd = Reader { inner: r, offset: 0 };
    let mut magic = [0u8; 4];
    rd.fill(&mut magic, "magic")?;
    if magic != DATASET_MAGIC {
        return format_error(0, format!("bad magic {magic:?}, expected \"SKL1\""));
    }
    let version = rd.u32("version")?;
    if version != DATASET_VERSION as usize {
        return format_error(4, format!("unsupported version {version}"));
    }
    let num_samples = rd.u32("sample count")?;
    let num_classes = rd.u32("class count")?;
    let code = rd.u32("topology code")?;
    let topology = TopologyKind::from_code(code as u32).or_else(|e| format_error(16, e.to_string()))?;

    let mut offsets = Vec::with_capacity(num_samples.min(1 << 16));
    let mut samples = Vec::with_capacity(num_samples.min(1 << 16));
    for index in 0..num_samples {
        let start = rd.offset;
        offsets.push(start);
        let label = rd.u32("label")?;
        let dims = [rd.u32("C")?, rd.u32("T")?, rd.u32("V")?, rd.u32("M")?];
        let valid_frames = rd.u32("valid_frames")?;
        if dims.contains(&0) {
            return format_error(start + 4, format!("sample {index}: zero extent in {dims:?}"));
        }
        if dims[2] != topology.num_joints() {
            return format_error(
                start + 12,
                format!("sample {index}: {} joints but topology {topology} has {}", dims[2], topology.num_joints()),
            );
        }
        if label >= num_classes {
            return Err(Error::Data {
                index,
                message: format!("label {label} >= {num_classes} classes (record at byte {start})"),
            });
        }
        if valid_frames == 0 || valid_frames > dims[1] {
            return format_error(start + 20, format!("sample {index}: valid_frames {valid_frames} outside 1..={}", dims[1]));
        }
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(numel) = numel.filter(|&n| n < (1 << 32)) else {
            return format_error(start + 4, format!("sample {index}: shape {dims:?} too large"));
        };
        let mut raw = vec![0u8; 4 * numel];
        rd.fill(&mut raw, "sample values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        samples.push(SkeletonSequence {
            values: Tensor::new(&dims, data)?,
            label,
            valid_frames,
        });
    }
    let mut probe = [0u8; 1];
    if rd.inner.read(&mut probe)? != 0 {
        return format_error(rd.offset, "trailing bytes after the last sample".into());
    }
    Ok((
        DatasetManifest {
            num_samples,
            num_classes,
            topology,
            offsets,
        },
        Dataset {
            num_classes,
            topology,
            samples,
        },
    ))
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<DatasetManifest> {
    write_dataset(BufWriter::new(File::create(path)?), dataset)
}

pub fn load_dataset(path: &Path) -> Result<(DatasetManifest, Dataset)> {
    read_dataset(BufReader::new(File::open(path)?))
}
