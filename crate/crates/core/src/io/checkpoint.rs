//! SCNW parameter files.
//!
//! Layout (little-endian): `"SCNW"`, u32 version, then until end of file one
//! record per tensor: u16 name length, UTF-8 name, u8 rank, `rank` u32 dims,
//! `product(dims)` f64 values.

use std::collections::BTreeSet;
use std::path::Path;

use segcrowd_autograd::Tensor;

use super::{read_file, write_file, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SCNW";
pub const VERSION: u32 = 1;

/// Named tensors in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub records: Vec<(String, Tensor)>,
}

fn err(reason: impl Into<String>) -> Error {
    Error::format("SCNW", reason)
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in &ckpt.records {
        let name_len = u16::try_from(name.len()).map_err(|_| err(format!("name {name:?} is too long")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| err(format!("{name}: rank {} is too high", t.rank())))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| err(format!("{name}: extent {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "SCNW");
    if r.take(4)? != MAGIC {
        return Err(err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    while r.remaining() > 0 {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| err("record name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(err(format!("duplicate record {name:?}")));
        }
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| err(format!("{name}: dims overflow")))?;
        let vals = r.f64s(n)?;
        let t = Tensor::new(dims, vals).map_err(|e| err(format!("{name}: {e}")))?;
        records.push((name, t));
    }
    Ok(Checkpoint { records })
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    decode(&read_file(path)?)
}

pub fn write(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &encode(ckpt)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            records: vec![
                (
                    "a.weight".into(),
                    Tensor::new(vec![2, 1, 1, 2], vec![0.1, -0.2, 3.0, 1e-300]).unwrap(),
                ),
                ("b".into(), Tensor::scalar(0.25)),
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let b = encode(&sample()).unwrap();
        let back = decode(&b).unwrap();
        assert_eq!(back, sample());
        assert_eq!(encode(&back).unwrap(), b);
    }

    #[test]
    fn header_layout() {
        let b = encode(&Checkpoint::default()).unwrap();
        assert_eq!(b, [b'S', b'C', b'N', b'W', 1, 0, 0, 0]);
        assert!(decode(&b).unwrap().records.is_empty());
    }

    #[test]
    fn rejects_malformed() {
        let b = encode(&sample()).unwrap();
        assert!(decode(&b[..b.len() - 3]).is_err());
        assert!(decode(&b[..3]).is_err());
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(decode(&v2).is_err());
        let mut dup = b.clone();
        dup.extend_from_slice(&b[8..]);
        assert!(decode(&dup).is_err());
        // rank 4 with enormous dims must not allocate
        let mut huge = b"SCNW\x01\0\0\0\x01\0x\x04".to_vec();
        for _ in 0..4 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(decode(&huge).is_err());
    }
}
