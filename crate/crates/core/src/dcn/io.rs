//! Binary tensor files for golden values: magic `DCNT`, a little-endian
//! `u32` rank, `u64` dimensions, then little-endian `f64` data.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::Tensor;

const MAGIC: &[u8; 4] = b"DCNT";

pub fn write_tensor<W: Write>(mut out: W, t: &Tensor) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<Tensor> {
    let bad = |m: &str| Error::Contract(format!("tensor file: {m}"));
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank > 8 {
        return Err(bad("rank above 8"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut u64buf = [0u8; 8];
    for _ in 0..rank {
        input.read_exact(&mut u64buf).map_err(|_| bad("truncated shape"))?;
        shape.push(u64::from_le_bytes(u64buf) as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("shape overflows"))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        input.read_exact(&mut u64buf).map_err(|_| bad("truncated data"))?;
        data.push(f64::from_le_bytes(u64buf));
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"DCNT");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 4 + 4 + 16 + 16);
        assert_eq!(&buf[24..32], &1.5f64.to_le_bytes());
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_tensor(&b"NOPE"[..]).is_err());
        assert!(read_tensor(&b"DCNT\x01\x00\x00\x00"[..]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in proptest::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
            let t = Tensor::from_fn(shape, |i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2));
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(&buf[..]).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
