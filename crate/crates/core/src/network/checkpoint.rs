use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named tensor of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor<f32>,
}

/// Serializes entries in order: magic, version, count, then per entry the
/// name, rank, extents and little-endian `f32` values.
pub fn write_checkpoint<W: Write>(mut w: W, entries: &[CheckpointEntry]) -> Result<()> {
    let u32_of = |n: usize, what: &str| -> Result<u32> {
        u32::try_from(n).map_err(|_| Error::Contract(format!("{what} {n} does not fit the checkpoint format")))
    };
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&u32_of(entries.len(), "entry count")?.to_le_bytes())?;
    for entry in entries {
        w.write_all(&u32_of(entry.name.len(), "name length")?.to_le_bytes())?;
        w.write_all(entry.name.as_bytes())?;
        w.write_all(&u32_of(entry.tensor.rank(), "rank")?.to_le_bytes())?;
        for &d in entry.tensor.shape() {
            w.write_all(&u32_of(d, "extent")?.to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(4 * entry.tensor.numel());
        for v in entry.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// Byte reader that reports the offset of every failure.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => {
                self.offset += n as u64;
                Ok(buf)
            }
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => Err(Error::Format {
                offset: self.offset,
                message: format!("truncated while reading {what}"),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fail<T>(&self, at: u64, message: String) -> Result<T> {
        Err(Error::Format { offset: at, message })
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Vec<CheckpointEntry>> {
    let mut c = Cursor { inner: r, offset: 0 };
    if c.bytes(4, "magic")? != CHECKPOINT_MAGIC {
        return c.fail(0, "bad magic, expected \"MGCK\"".into());
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return c.fail(4, format!("unsupported checkpoint version {version}"));
    }
    let count = c.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let at = c.offset;
        let len = c.u32("name length")? as usize;
        let name = String::from_utf8(c.bytes(len, "name")?).or_else(|_| c.fail(at + 4, "name is not UTF-8".into()))?;
        let at = c.offset;
        let rank = c.u32("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return c.fail(at, format!("{name}: rank {rank} outside 1..={MAX_RANK}"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("extent")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(numel) = numel.filter(|_| shape.iter().all(|&d| d > 0)) else {
            return c.fail(at, format!("{name}: invalid shape {shape:?}"));
        };
        let raw = c.bytes(4 * numel, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.push(CheckpointEntry {
            name,
            tensor: Tensor::new(&shape, data)?,
        });
    }
    Ok(entries)
}
