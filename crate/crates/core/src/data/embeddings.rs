//! `G3EM` embedding files: precomputed image or text embeddings keyed by
//! image id.
//!
//! Layout, little-endian:
//! `"G3EM"`, version `u32`, dim `u32`, count `u64`, then `count` rows of
//! id length `u32`, UTF-8 id, `dim` × `f32`.

use std::collections::HashSet;
use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::nn::Matrix;

const MAGIC: &[u8; 4] = b"G3EM";
pub const EMBEDDING_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    ids: Vec<String>,
    vectors: Matrix<f32>,
}

impl EmbeddingFile {
    /// Ids must be unique and non-empty; one row of `vectors` per id.
    pub fn new(ids: Vec<String>, vectors: Matrix<f32>) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::usage(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                vectors.rows()
            )));
        }
        if vectors.cols() == 0 {
            return Err(Error::usage("embedding dimension must be positive"));
        }
        check_ids(&ids).map_err(Error::usage)?;
        Ok(Self { ids, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &Matrix<f32> {
        &self.vectors
    }

    pub fn into_parts(self) -> (Vec<String>, Matrix<f32>) {
        (self.ids, self.vectors)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(EMBEDDING_FILE_VERSION);
        w.u32(u32::try_from(self.dim()).map_err(|_| Error::usage("dimension too large"))?);
        w.u64(self.len() as u64);
        for (i, id) in self.ids.iter().enumerate() {
            w.str(id)?;
            w.f32_slice(self.vectors.row(i));
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != EMBEDDING_FILE_VERSION {
            return Err(Error::format(format!("unsupported G3EM version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::format("G3EM dimension is zero"));
        }
        let row_bytes = dim
            .checked_mul(4)
            .and_then(|b| b.checked_add(4))
            .ok_or_else(|| Error::format("G3EM dimension overflows"))?;
        let count = r.count(row_bytes)?;
        let mut ids = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for row in 0..count {
            ids.push(r.str()?);
            let v = r.f32_vec(dim)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::format(format!("row {row} contains a non-finite value")));
            }
            data.extend(v);
        }
        r.finish()?;
        check_ids(&ids).map_err(Error::format)?;
        Ok(Self { ids, vectors: Matrix::from_vec(count, dim, data)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn check_ids(ids: &[String]) -> std::result::Result<(), String> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if id.is_empty() {
            return Err("empty image id".into());
        }
        if !seen.insert(id.as_str()) {
            return Err(format!("duplicate image id {id:?}"));
        }
    }
    Ok(())
}
