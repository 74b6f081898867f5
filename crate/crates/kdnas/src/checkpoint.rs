//! Flat binary parameter files with a JSON shape manifest.
//!
//! Layout: 8-byte magic `KDNASCP1`, a little-endian `u64` header length,
//! the UTF-8 JSON header, then all tensor values as little-endian `f64` in
//! manifest order. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"KDNASCP1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    meta: Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Write named tensors plus free-form metadata.
pub fn save(path: &Path, tensors: &[(String, &Tensor)], meta: Value) -> Result<()> {
    let header = Header {
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, t) in tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back as `(named tensors, metadata)`.
pub fn load(path: &Path) -> Result<(Vec<(String, Tensor)>, Value)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Input(format!(
            "{}: not a parameter checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name, Tensor::new(entry.shape, data)?));
    }
    Ok((tensors, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3e-300, f64::MIN_POSITIVE, 0.0, -0.0])
            .unwrap();
        let b = Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        save(
            &path,
            &[("a".into(), &a), ("b".into(), &b)],
            json!({"kind": "test"}),
        )
        .unwrap();
        let (tensors, meta) = load(&path).unwrap();
        assert_eq!(meta["kind"], "test");
        assert_eq!(tensors.len(), 2);
        assert_eq!(tensors[0].0, "a");
        assert_eq!(tensors[0].1.data(), a.data());
        assert_eq!(tensors[0].1.shape(), a.shape());
        assert_eq!(tensors[1].1.data(), b.data());
        // Bit-level equality, including the negative zero.
        assert_eq!(
            tensors[0].1.data()[5].to_bits(),
            (-0.0f64).to_bits()
        );
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load(&path).is_err());
    }
}
