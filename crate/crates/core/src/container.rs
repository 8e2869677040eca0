//! Versioned little-endian binary container for named tensors.
//!
//! Layout: magic `ZSNSBLOB`, `u32` version, kind string, JSON metadata
//! string, `u32` tensor count, then per tensor a name, `u32` rank, `u64`
//! dims and `f64` data. A SHA-256 digest of all preceding bytes closes the
//! file. Strings are a `u32` byte length followed by UTF-8.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ZSNSBLOB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, metadata: serde_json::Value) -> Self {
        Container {
            kind: kind.into(),
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.metadata.to_string());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a container, checking the magic, version, digest and that the
    /// kind matches `expected_kind` when given.
    pub fn from_bytes(bytes: &[u8], expected_kind: Option<&str>) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(Error::Format {
                what: "container".into(),
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                actual: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                what: "container version".into(),
                expected: VERSION.to_string(),
                actual: version.to_string(),
            });
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(malformed("digest mismatch"));
        }
        let kind = r.string()?;
        if let Some(k) = expected_kind {
            if k != kind {
                return Err(Error::Format {
                    what: "container kind".into(),
                    expected: k.into(),
                    actual: kind,
                });
            }
        }
        let metadata = serde_json::from_str(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| malformed("tensor size overflows"))?;
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| malformed("tensor size overflows"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != body.len() {
            return Err(malformed("trailing bytes"));
        }
        Ok(Container {
            kind,
            metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, expected_kind: Option<&str>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Container::from_bytes(&bytes, expected_kind).map_err(|e| e.context(format!("reading {}", path.display())))
    }
}

fn malformed(reason: &str) -> Error {
    Error::Malformed {
        what: "container".into(),
        reason: reason.into(),
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| malformed("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| malformed("invalid utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("checkpoint", serde_json::json!({"epoch": 3}));
        c.push(
            "w",
            Tensor::new(vec![2, 2], vec![1.0, -2.5, f64::MIN_POSITIVE, 0.1]).unwrap(),
        );
        c.push("b", Tensor::from_vec(vec![7.0]));
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes(), Some("checkpoint")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get("b").unwrap().data(), &[7.0]);
    }

    #[test]
    fn rejects_bad_magic_version_kind_and_corruption() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad, None).unwrap_err().is_data());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(Container::from_bytes(&bad, None), Err(Error::Format { .. })));
        assert!(matches!(
            Container::from_bytes(&bytes, Some("dataset")),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 40] ^= 1;
        assert!(matches!(
            Container::from_bytes(&bad, None),
            Err(Error::Malformed { .. })
        ));
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3], None).is_err());
    }
}
