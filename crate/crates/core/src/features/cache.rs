//! Binary feature cache: a header, then per sample a JSON metadata blob, the
//! candidate labels and every candidate's six shape-prefixed tensors, all
//! little-endian with 32-bit floats.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FeatureBundle, FeatureKind};
use crate::error::{Error, Result};
use crate::io::{atomic_write, Reader};

pub const CACHE_MAGIC: &[u8; 4] = b"IRLF";
pub const CACHE_VERSION: u32 = 1;

/// One planning tick: candidate features plus the target distribution over candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedSample {
    pub meta: SampleMeta,
    pub labels: Vec<f32>,
    pub bundles: Vec<FeatureBundle>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scenario_id: String,
    pub tick: usize,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub split: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureCache {
    pub samples: Vec<CachedSample>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_feature_cache(cache: &FeatureCache) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    put_u32(&mut out, CACHE_VERSION);
    put_u32(&mut out, FeatureKind::ALL.len() as u32);
    out.extend_from_slice(&(cache.samples.len() as u64).to_le_bytes());
    for s in &cache.samples {
        if s.labels.len() != s.bundles.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} candidates",
                s.labels.len(),
                s.bundles.len()
            )));
        }
        let meta = serde_json::to_vec(&s.meta)?;
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(&meta);
        put_u32(&mut out, s.bundles.len() as u32);
        for l in &s.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for b in &s.bundles {
            for t in &b.tensors {
                let (r, c) = t.dim();
                put_u32(&mut out, r as u32);
                put_u32(&mut out, c as u32);
                for v in t.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_feature_cache(bytes: &[u8]) -> Result<FeatureCache> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::Format("not a feature cache".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("feature cache version {version}, expected {CACHE_VERSION}")));
    }
    if r.u32()? as usize != FeatureKind::ALL.len() {
        return Err(Error::Format("unexpected feature count".into()));
    }
    let n = r.u64()? as usize;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let meta: SampleMeta = serde_json::from_slice(r.take(len)?)?;
        let m = r.u32()? as usize;
        let labels = (0..m).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let mut bundles = Vec::with_capacity(m);
        for _ in 0..m {
            let mut tensors = Vec::with_capacity(6);
            for kind in FeatureKind::ALL {
                let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
                if (rows, cols) != kind.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} stored as {rows}x{cols}, expected {:?}",
                        kind.name(),
                        kind.shape()
                    )));
                }
                let data = (0..rows * cols).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                tensors.push(Array2::from_shape_vec((rows, cols), data).unwrap());
            }
            bundles.push(FeatureBundle {
                tensors: tensors.try_into().unwrap(),
            });
        }
        samples.push(CachedSample { meta, labels, bundles });
    }
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after feature cache".into()));
    }
    Ok(FeatureCache { samples })
}

pub fn write_feature_cache(path: &Path, cache: &FeatureCache) -> Result<()> {
    atomic_write(path, &encode_feature_cache(cache)?)
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureCache> {
    decode_feature_cache(&std::fs::read(path)?)
}
