//! `G3IX` index files.
//!
//! Layout, little-endian: `"G3IX"`, version `u32`, metric tag `u32`,
//! dim `u32`, count `u64`, then per record id `u64`, `dim` × `f32`,
//! lat `f64`, lon `f64`, text (`u32` length + UTF-8). An IVF flag `u32`
//! follows; when set: n_clusters, kmeans_iters, seed, nprobe (all `u64`),
//! the centroid tensor (`n_clusters` × `dim` × `f32`), and one posting list
//! per cluster as a `u64` count of `u64` record positions.

use std::path::Path;

use super::{IndexRecord, Ivf, IvfParams, VectorIndex};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;

const MAGIC: &[u8; 4] = b"G3IX";
pub const INDEX_FILE_VERSION: u32 = 1;
const METRIC_INNER_PRODUCT: u32 = 0;

impl VectorIndex {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(INDEX_FILE_VERSION);
        w.u32(METRIC_INNER_PRODUCT);
        w.u32(u32::try_from(self.dim).map_err(|_| Error::usage("dimension too large"))?);
        w.u64(self.len() as u64);
        for r in self.iter() {
            w.u64(r.id);
            w.f32_slice(r.vector);
            w.f64(r.point.lat());
            w.f64(r.point.lon());
            w.str(r.text)?;
        }
        match &self.ivf {
            None => w.u32(0),
            Some(ivf) => {
                w.u32(1);
                let p = ivf.params;
                for v in [p.n_clusters as u64, p.kmeans_iters as u64, p.seed, p.nprobe as u64] {
                    w.u64(v);
                }
                w.f32_slice(&ivf.centroids);
                for list in &ivf.lists {
                    w.u64(list.len() as u64);
                    for &pos in list {
                        w.u64(pos as u64);
                    }
                }
            }
        }
        Ok(w.finish())
    }

    /// Parses and fully validates an index; any defect is a format error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_FILE_VERSION {
            return Err(Error::format(format!("unsupported G3IX version {version}")));
        }
        let metric = r.u32()?;
        if metric != METRIC_INNER_PRODUCT {
            return Err(Error::format(format!("unknown metric tag {metric}")));
        }
        let dim = r.u32()? as usize;
        let mut index = VectorIndex::new(dim).map_err(|e| Error::format(e.to_string()))?;
        let min_record = dim
            .checked_mul(4)
            .and_then(|b| b.checked_add(8 + 16 + 4))
            .ok_or_else(|| Error::format("dimension overflows"))?;
        let count = r.count(min_record)?;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let id = r.u64()?;
            let vector = r.f32_vec(dim)?;
            let (lat, lon) = (r.f64()?, r.f64()?);
            let point = GeoPoint::new(lat, lon).map_err(|e| Error::format(e.to_string()))?;
            let text = r.str()?;
            records.push(IndexRecord { id, vector, point, text });
        }
        index.add(records).map_err(|e| Error::format(e.to_string()))?;

        match r.u32()? {
            0 => {}
            1 => index.ivf = Some(read_ivf(&mut r, dim, count)?),
            flag => return Err(Error::format(format!("bad IVF flag {flag}"))),
        }
        r.finish()?;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_ivf(r: &mut ByteReader<'_>, dim: usize, count: usize) -> Result<Ivf> {
    let mut field = || -> Result<usize> {
        usize::try_from(r.u64()?).map_err(|_| Error::format("IVF parameter overflows"))
    };
    let n_clusters = field()?;
    let kmeans_iters = field()?;
    let seed = r.u64()?;
    let nprobe = usize::try_from(r.u64()?).map_err(|_| Error::format("IVF parameter overflows"))?;
    let params = IvfParams { n_clusters, kmeans_iters, seed, nprobe };
    params.validate(count).map_err(|e| Error::format(e.to_string()))?;
    let centroids = r.f32_vec(
        n_clusters.checked_mul(dim).ok_or_else(|| Error::format("centroid tensor overflows"))?,
    )?;
    if centroids.iter().any(|x| !x.is_finite()) {
        return Err(Error::format("non-finite centroid"));
    }
    let mut seen = vec![false; count];
    let mut lists = Vec::with_capacity(n_clusters);
    for _ in 0..n_clusters {
        let len = r.count(8)?;
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            let pos = r.u64()?;
            let pos = usize::try_from(pos).ok().filter(|&p| p < count).ok_or_else(|| {
                Error::format(format!("posting {pos} out of range"))
            })?;
            if std::mem::replace(&mut seen[pos], true) {
                return Err(Error::format(format!("record {pos} posted twice")));
            }
            list.push(pos);
        }
        lists.push(list);
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::format("posting lists do not cover every record"));
    }
    Ok(Ivf { params, centroids, lists })
}
