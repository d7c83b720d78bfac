//! Binary parameter container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "IMTCKPT\0"
//! version    u32      currently 1
//! beta1      f64
//! beta2      f64
//! epsilon    f64
//! step       u64
//! count      u32
//! count × {
//!     name_len u32, name utf-8
//!     ndim     u32, dims u64 × ndim
//!     values   f64 × prod(dims)
//!     m        f64 × prod(dims)
//!     v        f64 × prod(dims)
//! }
//! ```
//!
//! Floats are stored by bit pattern, so a save/load cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use super::params::{AdamConfig, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"IMTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for x in [store.adam.beta1, store.adam.beta2, store.adam.epsilon] {
        out.write_all(&x.to_le_bytes())?;
    }
    out.write_all(&store.step_count().to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        let value = store.value(id);
        out.write_all(&(value.shape().len() as u32).to_le_bytes())?;
        for d in value.shape() {
            out.write_all(&(*d as u64).to_le_bytes())?;
        }
        let (m, v) = store.moments(id);
        for tensor in [value, m, v] {
            for x in tensor.data() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let adam = AdamConfig {
        beta1: read_f64(&mut input)?,
        beta2: read_f64(&mut input)?,
        epsilon: read_f64(&mut input)?,
    };
    let step = read_u64(&mut input)?;
    let count = read_u32(&mut input)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format("checkpoint", "parameter name is not utf-8"))?;
        let ndim = read_u32(&mut input)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut read_tensor = || -> Result<Tensor> {
            let data = (0..len)
                .map(|_| read_f64(&mut input))
                .collect::<Result<Vec<_>>>()?;
            Tensor::from_vec(&shape, data)
        };
        let value = read_tensor()?;
        let m = read_tensor()?;
        let v = read_tensor()?;
        entries.push((name, value, m, v));
    }
    Ok(ParamStore::from_parts(entries, step, adam))
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    write_checkpoint(store, &mut writer)?;
    writer.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::params::adam_step;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), steps in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let a = store.add("a", Tensor::uniform(&[3, 2], 1.0, &mut rng));
            store.add("b.bias", Tensor::uniform(&[5], 1e-3, &mut rng));
            store.add("scalar", Tensor::uniform(&[1], 10.0, &mut rng));
            for _ in 0..steps {
                store.grads_mut().get_mut(a).data_mut()[1] = 0.5;
                adam_step(&mut store, 1e-3);
            }
            let mut bytes = Vec::new();
            write_checkpoint(&store, &mut bytes).unwrap();
            let back = read_checkpoint(bytes.as_slice()).unwrap();
            prop_assert_eq!(&back, &store);
            let mut again = Vec::new();
            write_checkpoint(&back, &mut again).unwrap();
            prop_assert_eq!(bytes, again);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_checkpoint(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(&[4]));
        let mut bytes = Vec::new();
        write_checkpoint(&store, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
