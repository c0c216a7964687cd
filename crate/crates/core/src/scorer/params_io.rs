//! Parameter file: magic, version, JSON scorer config, then named tensors with
//! shape headers as little-endian 64-bit floats.

use std::path::Path;

use ndarray::Array2;

use super::model::{ScorerConfig, ScorerParams};
use crate::error::{Error, Result};
use crate::io::{atomic_write, Reader};

pub const PARAMS_MAGIC: &[u8; 4] = b"DIRL";
pub const PARAMS_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_params(p: &ScorerParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    put_u32(&mut out, PARAMS_VERSION);
    let cfg = serde_json::to_vec(&p.config)?;
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(&cfg);
    put_u32(&mut out, p.values.len() as u32);
    for ((name, v), &t) in p.names.iter().zip(&p.values).zip(&p.trainable) {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        out.push(t as u8);
        put_u32(&mut out, v.nrows() as u32);
        put_u32(&mut out, v.ncols() as u32);
        for x in v.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<ScorerParams> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != PARAMS_MAGIC {
        return Err(Error::Format("not a scorer parameter file".into()));
    }
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!("parameter file version {version}, expected {PARAMS_VERSION}")));
    }
    let len = r.u32()? as usize;
    let config: ScorerConfig = serde_json::from_slice(r.take(len)?)?;
    let n = r.u32()? as usize;
    let (mut names, mut values, mut trainable) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let t = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad trainable flag {b}"))),
        };
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let data = (0..rows * cols)
            .map(|_| Ok(f64::from_le_bytes(r.take(8)?.try_into().unwrap())))
            .collect::<Result<Vec<_>>>()?;
        names.push(name);
        values.push(Array2::from_shape_vec((rows, cols), data).unwrap());
        trainable.push(t);
    }
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let p = ScorerParams { config, names, values, trainable };
    let expected = super::model::init_params(&p.config, 0);
    if expected.names != p.names || expected.values.iter().zip(&p.values).any(|(a, b)| a.dim() != b.dim()) {
        return Err(Error::Format("parameter layout does not match the stored config".into()));
    }
    Ok(p)
}

pub fn save_params(path: &Path, p: &ScorerParams) -> Result<()> {
    atomic_write(path, &encode_params(p)?)
}

pub fn load_params(path: &Path) -> Result<ScorerParams> {
    decode_params(&std::fs::read(path)?)
}
