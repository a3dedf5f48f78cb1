//! Versioned binary model checkpoints: architecture, training seed, and all
//! parameter tensors in the order of [`TENSOR_NAMES`](super::TENSOR_NAMES).
//! Round-trips are bit-exact.

use std::path::Path;

use super::{Architecture, ModelParams, Variant};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};

const MAGIC: &[u8; 4] = b"SNCK";
const VERSION: u32 = 1;

pub fn write_checkpoint<F: Scalar>(
    arch: &Architecture,
    seed: u64,
    params: &ModelParams<F>,
) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u8(F::DTYPE.code());
    w.u8(arch.variant.code());
    w.u64(arch.num_pois as u64);
    w.u64(arch.hidden1 as u64);
    w.u64(arch.bottleneck as u64);
    w.u64(arch.aspects as u64);
    w.f64(arch.dropout_p);
    w.u64(seed);
    let mut body = w.into_bytes();
    for idx in 0..ModelParams::<F>::num_tensors() {
        let flat = params.flat(idx);
        body.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for &v in flat {
            v.write_le(&mut body);
        }
    }
    body
}

pub fn read_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<(Architecture, u64, ModelParams<F>)> {
    let mut r = Reader::new(bytes, MAGIC, VERSION)?;
    let dtype = Dtype::from_code(r.u8()?)
        .ok_or_else(|| Error::Format("unknown dtype code".into()))?;
    if dtype != F::DTYPE {
        return Err(Error::Format(format!(
            "checkpoint holds {dtype} tensors, expected {}",
            F::DTYPE
        )));
    }
    let variant = Variant::from_code(r.u8()?)
        .ok_or_else(|| Error::Format("unknown variant code".into()))?;
    let num_pois = r.u64()? as usize;
    let hidden1 = r.u64()? as usize;
    let bottleneck = r.u64()? as usize;
    let aspects = r.u64()? as usize;
    let dropout_p = r.f64()?;
    let arch = Architecture {
        num_pois,
        hidden1,
        bottleneck,
        aspects,
        variant,
        dropout_p,
    };
    arch.validate()?;
    let seed = r.u64()?;

    let mut params = ModelParams::zeros(&arch);
    for idx in 0..ModelParams::<F>::num_tensors() {
        let len = r.u64()? as usize;
        let flat = params.flat_mut(idx);
        if len != flat.len() {
            return Err(Error::Format(format!(
                "tensor {} has {} elements, expected {}",
                super::TENSOR_NAMES[idx],
                len,
                flat.len()
            )));
        }
        let raw = r.raw(len * F::WIDTH)?;
        for (i, slot) in flat.iter_mut().enumerate() {
            *slot = F::read_le(&raw[i * F::WIDTH..]);
        }
    }
    r.finish()?;
    Ok((arch, seed, params))
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    arch: &Architecture,
    seed: u64,
    params: &ModelParams<F>,
) -> Result<()> {
    std::fs::write(path, write_checkpoint(arch, seed, params))?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(Architecture, u64, ModelParams<F>)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&bytes)
}

/// Element type stored in a checkpoint file, without loading the tensors.
pub fn checkpoint_dtype(path: &Path) -> Result<Dtype> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, MAGIC, VERSION)?;
    Dtype::from_code(r.u8()?).ok_or_else(|| Error::Format("unknown dtype code".into()))
}
