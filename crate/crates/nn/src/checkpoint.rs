//! `VAMD1`: magic, config echo, then named parameter blobs as `f32`.

use std::path::Path;

use vattr_core::binio::{put_string, put_u32, Cursor};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"VAMD1";

pub fn encode_checkpoint<T: Scalar>(config_echo: &str, store: &ParamStore<T>) -> Vec<u8> {
    let mut buf = MAGIC.to_vec();
    put_string(&mut buf, config_echo);
    put_u32(&mut buf, store.len() as u32);
    for id in store.ids() {
        let v = store.value(id);
        put_string(&mut buf, store.name(id));
        put_u32(&mut buf, v.rank() as u32);
        for &d in v.shape() {
            put_u32(&mut buf, d as u32);
        }
        for x in v.data() {
            buf.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    buf
}

/// Parameters by name, in file order.
pub type NamedTensors = Vec<(String, Tensor<f32>)>;

/// Returns the config echo and the stored parameters in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(String, NamedTensors)> {
    let mut c = Cursor::new(bytes);
    c.expect_magic(MAGIC)?;
    let config = c.string()?;
    let n = c.u32()? as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| c.f32()).collect::<Result<Vec<_>, _>>()?;
        params.push((name, Tensor::new(&shape, data)?));
    }
    c.expect_end()?;
    Ok((config, params))
}

/// Copies stored values into a store with the same names and shapes.
pub fn restore_params<T: Scalar>(store: &mut ParamStore<T>, params: &[(String, Tensor<f32>)]) -> Result<()> {
    if params.len() != store.len() {
        return Err(NnError::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            params.len(),
            store.len()
        )));
    }
    for (name, t) in params {
        let id = store
            .find(name)
            .ok_or_else(|| NnError::Format(format!("unknown parameter {name}")))?;
        if store.value(id).shape() != t.shape() {
            return Err(NnError::Format(format!(
                "parameter {name}: shape {:?} vs stored {:?}",
                store.value(id).shape(),
                t.shape()
            )));
        }
        *store.value_mut(id) = t.cast();
    }
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(path: &Path, config_echo: &str, store: &ParamStore<T>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(config_echo, store)).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(String, NamedTensors)> {
    let bytes = std::fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_restores_identical_values() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamStore::<f32>::new();
        a.kaiming("conv.weight", &[4, 2, 3], 6, &mut rng);
        a.add("conv.bias", Tensor::filled(&[4], 0.25));
        let bytes = encode_checkpoint("{\"x\":1}", &a);
        let (cfg, params) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(cfg, "{\"x\":1}");
        let mut b = ParamStore::<f32>::new();
        b.add("conv.weight", Tensor::zeros(&[4, 2, 3]));
        b.add("conv.bias", Tensor::zeros(&[4]));
        restore_params(&mut b, &params).unwrap();
        for id in a.ids() {
            assert_eq!(a.value(id), b.value(id));
        }
    }

    #[test]
    fn rejects_corruption_and_mismatch() {
        let mut a = ParamStore::<f32>::new();
        a.add("w", Tensor::zeros(&[3]));
        let bytes = encode_checkpoint("", &a);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"NOPE1").is_err());
        let (_, params) = decode_checkpoint(&bytes).unwrap();
        let mut b = ParamStore::<f32>::new();
        b.add("w", Tensor::zeros(&[4]));
        assert!(restore_params(&mut b, &params).is_err());
    }
}
