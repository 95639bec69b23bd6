//! Versioned checkpoint container.
//!
//! Layout: one JSON header line (format version + parameter manifest:
//! name, dims, dtype), a newline, then raw little-endian values in manifest
//! order. The loader rejects unknown format versions and dtype mismatches.

use crate::error::{Error, Result};
use crate::numerics::store::ParameterStore;
use crate::numerics::tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dims: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    params: Vec<ManifestEntry>,
}

pub fn save<T: Real, P: AsRef<Path>>(store: &ParameterStore<T>, path: P) -> Result<()> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        params: store
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.to_string(),
                dims: t.shape().to_vec(),
                dtype: T::DTYPE.to_string(),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, t) in store.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes_vec())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load<T: Real, P: AsRef<Path>>(path: P) -> Result<ParameterStore<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(Error::CheckpointFormat("missing header terminator".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::CheckpointFormat(format!("bad header: {}", e)))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: header.format_version,
            supported: CHECKPOINT_VERSION,
        });
    }

    let mut store = ParameterStore::new();
    let width = T::byte_width();
    for entry in &header.params {
        if entry.dtype != T::DTYPE {
            return Err(Error::CheckpointFormat(format!(
                "parameter {} has dtype {}, expected {}",
                entry.name, entry.dtype, T::DTYPE
            )));
        }
        let count: usize = entry.dims.iter().product();
        let mut buf = vec![0u8; count * width];
        r.read_exact(&mut buf).map_err(|_| {
            Error::CheckpointFormat(format!("truncated data for parameter {}", entry.name))
        })?;
        let data: Vec<T> =
            buf.chunks_exact(width).map(|chunk| T::from_le_slice(chunk)).collect();
        store.insert(&entry.name, Tensor::new(entry.dims.clone(), data)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn roundtrip_preserves_values_and_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParameterStore::<f32>::new();
        store.insert("b", Tensor::new(vec![2], vec![1.5, -2.5]).unwrap()).unwrap();
        store.insert("a", Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        save(&store, &path).unwrap();
        let loaded = load::<f32, _>(&path).unwrap();
        assert_eq!(loaded.names(), store.names());
        assert_eq!(loaded.get("b").unwrap().data(), store.get("b").unwrap().data());
        assert_eq!(loaded.get("a").unwrap().shape(), &[1, 3]);
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("future.ckpt");
        std::fs::write(&path, b"{\"format_version\":99,\"params\":[]}\n").unwrap();
        match load::<f32, _>(&path) {
            Err(Error::CheckpointVersion { found: 99, .. }) => {}
            other => panic!("expected version rejection, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mix.ckpt");
        let mut store = ParameterStore::<f64>::new();
        store.insert("w", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        save(&store, &path).unwrap();
        assert!(load::<f32, _>(&path).is_err());
    }
}
