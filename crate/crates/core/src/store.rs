//! Binary container used for checkpoints and path ensembles.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header,
//! `u64` payload length, then the payload as little-endian `f64`.
//! Writes go to a temporary sibling file which is then renamed into place.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::Value;

pub const MAGIC: &[u8; 8] = b"OCNASH\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Format(String),
}

pub fn encode(header: &Value, payload: &[f64]) -> Vec<u8> {
    let header_bytes = serde_json::to_vec(header).expect("JSON values always serialise");
    let mut buf = Vec::with_capacity(28 + header_bytes.len() + 8 * payload.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<(Value, Vec<f64>), StoreError> {
    let fail = |msg: &str| StoreError::Format(msg.to_string());
    let take = |pos: &mut usize, len: usize| -> Result<&[u8], StoreError> {
        let end = pos.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| fail("truncated file"))?;
        let out = &bytes[*pos..end];
        *pos = end;
        Ok(out)
    };
    let mut pos = 0;
    if take(&mut pos, 8)? != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(StoreError::Format(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let header: Value =
        serde_json::from_slice(take(&mut pos, header_len)?).map_err(|e| StoreError::Format(e.to_string()))?;
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let data = take(&mut pos, count.checked_mul(8).ok_or_else(|| fail("payload too large"))?)?;
    if pos != bytes.len() {
        return Err(fail("trailing bytes"));
    }
    let payload = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

/// Write `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write(path: &Path, header: &Value, payload: &[f64]) -> io::Result<()> {
    write_atomic(path, &encode(header, payload))
}

pub fn read(path: &Path) -> Result<(Value, Vec<f64>), StoreError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(payload in proptest::collection::vec(proptest::num::f64::ANY, 0..64)) {
            let header = serde_json::json!({"kind": "test", "n": payload.len()});
            let (h, p) = decode(&encode(&header, &payload)).unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(p.len(), payload.len());
            for (a, b) in p.iter().zip(&payload) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&serde_json::json!({}), &[1.0, 2.0]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        write(&path, &serde_json::json!({"v": 1}), &[1.0]).unwrap();
        write(&path, &serde_json::json!({"v": 2}), &[2.0]).unwrap();
        let (h, p) = read(&path).unwrap();
        assert_eq!(h["v"], 2);
        assert_eq!(p, vec![2.0]);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
