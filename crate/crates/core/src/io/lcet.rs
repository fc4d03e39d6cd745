//! `.lcet`: magic `LCET`, u32 rank, u32 extents, then little-endian f32
//! values in row-major order.

use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"LCET";

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "lcet",
        msg: msg.into(),
    }
}

pub(crate) fn u32_at(bytes: &[u8], off: usize) -> Option<u32> {
    bytes.get(off..off + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

/// Decodes one tensor; returns it with the number of bytes consumed.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor<f32>, usize)> {
    if bytes.get(..4) != Some(TENSOR_MAGIC) {
        return Err(bad("missing LCET magic"));
    }
    let rank = u32_at(bytes, 4).ok_or_else(|| bad("truncated header"))? as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u32_at(bytes, 8 + 4 * i).ok_or_else(|| bad("truncated extents"))? as usize);
    }
    let start = 8 + 4 * rank;
    let n: usize = shape.iter().product();
    let body = bytes
        .get(start..start + 4 * n)
        .ok_or_else(|| bad(format!("payload needs {} bytes", 4 * n)))?;
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Tensor::new(&shape, data)?, start + 4 * n))
}

pub fn write_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write_file(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let bytes = read_file(path)?;
    let (t, used) = decode_tensor(&bytes)?;
    if used != bytes.len() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2], vec![1.0f32, -2.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..4], b"LCET");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 20);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_tensor(b"NOPE").is_err());
        let mut b = encode_tensor(&Tensor::ones(&[3]));
        b.truncate(b.len() - 1);
        assert!(decode_tensor(&b).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(shape in proptest::collection::vec(1usize..4, 0..4), seed in any::<u32>()) {
            let t = Tensor::from_fn(&shape, |i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) & 0x3fff_ffff));
            let (back, used) = decode_tensor(&encode_tensor(&t)).unwrap();
            prop_assert_eq!(used, 8 + 4 * shape.len() + 4 * t.len());
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
