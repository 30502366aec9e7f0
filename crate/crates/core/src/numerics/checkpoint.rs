//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   "DCSCKPT\n"
//! version  u32       currently 1
//! count    u32       number of parameters
//! repeated count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rows u64, cols u64
//!   values   rows * cols f64 (IEEE-754 bits, row-major)
//! ```
//!
//! Values are stored bit-for-bit, so save/load round-trips exactly.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::graph::ParamStore;
use crate::numerics::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DCSCKPT\n";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(store: &ParamStore, mut w: impl Write) -> Result<()> {
    if let Some(p) = store.params().iter().find(|p| !p.tensor.all_finite()) {
        return Err(Error::Checkpoint(format!(
            "parameter {} holds non-finite values",
            p.name
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.params() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.tensor.rows() as u64).to_le_bytes())?;
        w.write_all(&(p.tensor.cols() as u64).to_le_bytes())?;
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(store: &ParamStore) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    Ok(buf)
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParamStore> {
    if &read_array::<8>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let values = (0..rows * cols)
            .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        store.add(name, Tensor::new(rows, cols, values)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shapes in prop::collection::vec((1usize..5, 1usize..5), 0..5),
            seed in any::<u64>(),
        ) {
            let mut store = ParamStore::new();
            let mut x = seed;
            for (k, (r, c)) in shapes.iter().enumerate() {
                let data = (0..r * c).map(|_| {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits(x >> 2) // finite: top exponent bit cleared
                }).collect();
                store.add(format!("layer{k}.w"), Tensor::new(*r, *c, data).unwrap());
            }
            let bytes = checkpoint_bytes(&store).unwrap();
            let back = read_checkpoint(&bytes[..]).unwrap();
            prop_assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
            for (a, b) in store.params().iter().zip(back.params()) {
                prop_assert_eq!(&a.name, &b.name);
                let bits_a: Vec<u64> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }

    #[test]
    fn rejects_nan_and_garbage() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(f64::NAN));
        assert!(checkpoint_bytes(&store).is_err());
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
        let mut ok = ParamStore::new();
        ok.add("w", Tensor::scalar(1.0));
        let bytes = checkpoint_bytes(&ok).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
