//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "TCJACKPT"  version:u16
//! arch:   u32 length + UTF-8
//! meta:   u32 length + JSON
//! count:  u32
//! count × { name: u16 length + UTF-8, dtype: u8, rank: u8, dims: rank × u32, values }
//! ```
//!
//! dtype codes: 1 = f32, 2 = f64, 3 = u64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::scalar::{Precision, Scalar};
use crate::tensor::{numel, Tensor};

use super::optim::OptimizerKind;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TCJACKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
            TensorData::U64(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U64(v) => v.len(),
        }
    }

    pub fn from_tensor<F: Scalar>(t: &Tensor<F>) -> Self {
        match F::PRECISION {
            Precision::F32 => TensorData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            Precision::F64 => TensorData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Record {
    pub fn tensor<F: Scalar>(name: impl Into<String>, t: &Tensor<F>) -> Self {
        Record {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: TensorData::from_tensor(t),
        }
    }

    /// Values as a tensor of `F`; the stored precision must be `F`'s.
    pub fn to_tensor<F: Scalar>(&self) -> Result<Tensor<F>> {
        let data: Vec<F> = match (&self.data, F::PRECISION) {
            (TensorData::F32(v), Precision::F32) => v.iter().map(|&x| F::lit(x as f64)).collect(),
            (TensorData::F64(v), Precision::F64) => v.iter().map(|&x| F::lit(x)).collect(),
            _ => {
                return Err(Error::Checkpoint(format!(
                    "tensor {} is not stored as {}",
                    self.name,
                    F::PRECISION.name()
                )))
            }
        };
        Tensor::new(self.shape.clone(), data)
    }
}

/// Everything needed to rebuild the network and resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub network: NetworkConfig,
    pub precision: Precision,
    pub epoch: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub meta: CheckpointMeta,
    pub records: Vec<Record>,
}

fn put_str(out: &mut Vec<u8>, s: &str, wide: bool) {
    if wide {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    } else {
        out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    }
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated {what} at byte {} (need {n}, have {})",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, wide: bool, what: &str) -> Result<String> {
        let n = if wide {
            self.u32(what)? as usize
        } else {
            self.u16(what)? as usize
        };
        let at = self.pos;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} at byte {at} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_string(&self.meta)
            .map_err(|e| Error::Checkpoint(format!("meta: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.arch, true);
        put_str(&mut out, &meta, true);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            if r.name.len() > u16::MAX as usize || r.shape.len() > u8::MAX as usize {
                return Err(Error::Checkpoint(format!("record {} too large", r.name)));
            }
            if numel(&r.shape) != r.data.len() {
                return Err(Error::Checkpoint(format!(
                    "record {} shape/data mismatch",
                    r.name
                )));
            }
            put_str(&mut out, &r.name, false);
            out.push(r.data.code());
            out.push(r.shape.len() as u8);
            for &d in &r.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &r.data {
                TensorData::F32(v) => v.iter().for_each(|&x| x.write_le(&mut out)),
                TensorData::F64(v) => v.iter().for_each(|&x| x.write_le(&mut out)),
                TensorData::U64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, expected TCJACKPT".into()));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let arch = r.string(true, "arch")?;
        let meta_text = r.string(true, "meta")?;
        let meta: CheckpointMeta = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Checkpoint(format!("meta: {e}")))?;
        let count = r.u32("record count")?;
        let mut records = Vec::with_capacity(count.min(1 << 16) as usize);
        for _ in 0..count {
            let name = r.string(false, "record name")?;
            let code = r.u8("dtype")?;
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = numel(&shape);
            let data = match code {
                1 => TensorData::F32(
                    r.take(4 * n, &name)?
                        .chunks_exact(4)
                        .map(f32::read_le)
                        .collect(),
                ),
                2 => TensorData::F64(
                    r.take(8 * n, &name)?
                        .chunks_exact(8)
                        .map(f64::read_le)
                        .collect(),
                ),
                3 => TensorData::U64(
                    r.take(8 * n, &name)?
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                other => {
                    return Err(Error::Checkpoint(format!(
                        "record {name}: unknown dtype code {other}"
                    )))
                }
            };
            records.push(Record { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last record",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            arch,
            meta,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            arch: "4C3-LIF-4FC".into(),
            meta: CheckpointMeta {
                network: NetworkConfig::default(),
                precision: Precision::F32,
                epoch: 3,
                optimizer: OptimizerKind::Adam,
                lr: 1e-3,
                step: 12,
            },
            records: vec![
                Record::tensor("w", &Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 * 0.1)),
                Record {
                    name: "state.rng".into(),
                    shape: vec![2],
                    data: TensorData::U64(vec![7, u64::MAX]),
                },
                Record::tensor("d", &Tensor::<f64>::from_fn(&[1, 1, 2], |i| -(i as f64))),
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..8], b"TCJACKPT");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = sample().encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Checkpoint::decode(&bad).is_err());
        assert!(Checkpoint::decode(b"NOTACKPT").is_err());
    }

    #[test]
    fn precision_checked() {
        let ck = sample();
        assert!(ck.record("w").unwrap().to_tensor::<f32>().is_ok());
        assert!(ck.record("w").unwrap().to_tensor::<f64>().is_err());
    }
}
