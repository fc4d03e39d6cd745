//! `.lcec` checkpoints.
//!
//! ```text
//! "LCEC" | u32 version | 32-byte config digest
//! u32 metadata length | metadata (UTF-8 `key=value` lines)
//! u32 entry count | entries: u32 name length, name, u32 rank, u32 extents.., u64 offset
//! payload: little-endian f32 values, offsets relative to payload start
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::lcet::u32_at;
use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LCEC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub type ConfigDigest = [u8; 32];

/// SHA-256 of a canonical config text.
pub fn digest_text(text: &str) -> ConfigDigest {
    Sha256::digest(text.as_bytes()).into()
}

pub fn digest_hex(d: &ConfigDigest) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: ConfigDigest,
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "lcec",
        msg: msg.into(),
    }
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        let meta: String = self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.len() as u64;
        }
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.get(..4) != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing LCEC magic"));
        }
        let version = u32_at(bytes, 4).ok_or_else(|| bad("truncated"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let digest: ConfigDigest = bytes
            .get(8..40)
            .ok_or_else(|| bad("truncated digest"))?
            .try_into()
            .unwrap();
        let mut pos = 40;
        let take_u32 = |pos: &mut usize| -> Result<usize> {
            let v = u32_at(bytes, *pos).ok_or_else(|| bad("truncated"))?;
            *pos += 4;
            Ok(v as usize)
        };
        let mlen = take_u32(&mut pos)?;
        let meta = std::str::from_utf8(bytes.get(pos..pos + mlen).ok_or_else(|| bad("truncated metadata"))?)
            .map_err(|_| bad("metadata is not UTF-8"))?;
        pos += mlen;
        let metadata = meta
            .lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| bad(format!("bad metadata line `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = take_u32(&mut pos)?;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = take_u32(&mut pos)?;
            let name = std::str::from_utf8(bytes.get(pos..pos + nlen).ok_or_else(|| bad("truncated name"))?)
                .map_err(|_| bad("name is not UTF-8"))?
                .to_string();
            pos += nlen;
            let rank = take_u32(&mut pos)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(take_u32(&mut pos)?);
            }
            let off = bytes
                .get(pos..pos + 8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| bad("truncated offset"))? as usize;
            pos += 8;
            table.push((name, shape, off));
        }
        let payload = &bytes[pos..];
        let mut tensors = Vec::with_capacity(count);
        let mut expected_end = 0;
        for (name, shape, off) in table {
            let n: usize = shape.iter().product();
            let raw = payload
                .get(off..off + 4 * n)
                .ok_or_else(|| bad(format!("payload for `{name}` out of range")))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            expected_end = expected_end.max(off + 4 * n);
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if expected_end != payload.len() {
            return Err(bad("payload size does not match table"));
        }
        Ok(Checkpoint {
            digest,
            metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            digest: digest_text("a=1\n"),
            metadata: vec![("step".into(), "12".into()), ("stage".into(), "sr".into())],
            tensors: vec![
                ("conv.weight".into(), Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.1 - 0.3)),
                ("alpha".into(), Tensor::new(&[1], vec![0.01]).unwrap()),
            ],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::decode(&c.encode()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta("step"), Some("12"));
        assert_eq!(back.tensor("alpha").unwrap().item(), 0.01);
    }

    #[test]
    fn header_starts_with_magic_and_version() {
        let b = sample().encode();
        assert_eq!(&b[..4], b"LCEC");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn truncation_detected() {
        let mut b = sample().encode();
        b.pop();
        assert!(Checkpoint::decode(&b).is_err());
        assert!(Checkpoint::decode(b"LCET").is_err());
    }
}
