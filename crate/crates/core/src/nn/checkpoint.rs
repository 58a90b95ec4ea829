//! The "G3NN" tensor archive.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "G3NN" | version u32 | header_len u32 | header (UTF-8 JSON)
//! tensor_count u64
//! per tensor: name_len u32 | name | rank u32 | dims u64×rank | f32×prod(dims)
//! ```

use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"G3NN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::usage(format!("tensor {name}: dims {dims:?} do not match data")));
        }
        Ok(Self { name, dims, data })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    /// Free-form JSON metadata describing how to rebuild the model.
    pub header: String,
    pub tensors: Vec<Tensor>,
}

impl TensorArchive {
    pub fn push(&mut self, t: Tensor) {
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(format!("checkpoint is missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.str(&self.header)?;
        w.u64(self.tensors.len() as u64);
        for t in &self.tensors {
            w.str(&t.name)?;
            w.u32(t.dims.len() as u32);
            for &d in &t.dims {
                w.u64(d as u64);
            }
            w.f32_slice(&t.data);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported G3NN version {version}")));
        }
        let header = r.str()?;
        // name length + rank
        let count = r.count(8)?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            if rank > r.remaining() / 8 {
                return Err(Error::format(format!("tensor {name}: rank {rank} is implausible")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(
                    usize::try_from(r.u64()?).map_err(|_| Error::format("dimension overflow"))?,
                );
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(format!("tensor {name}: size overflows")))?;
            let data = r.f32_vec(len)?;
            tensors.push(Tensor { name, dims, data });
        }
        r.finish()?;
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
