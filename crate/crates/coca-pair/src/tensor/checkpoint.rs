//! Single-file checkpoint format.
//!
//! Layout: `b"CPKT"` magic, `u32` version, `u64` manifest length, a JSON
//! manifest (tensor name / shape / dtype / byte offset plus free-form
//! metadata), then one flat little-endian float payload. Round trips are
//! bit-exact because the payload stores the raw bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dtype, Element, Tensor};
use crate::{Error, Result};

/// Ordered collection of named tensors (parameters, optimizer moments...).
pub type TensorMap<E> = BTreeMap<String, Tensor<E>>;

const MAGIC: &[u8; 4] = b"CPKT";
const VERSION: u32 = 1;

/// One tensor record in the checkpoint manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Byte offset into the payload section.
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

/// Write `tensors` (and optional metadata) to `path` atomically.
pub fn save_tensors<E: Element>(
    path: &Path,
    tensors: &TensorMap<E>,
    meta: serde_json::Value,
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in tensors {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: E::DTYPE,
            offset: payload.len() as u64,
        });
        for &v in t.data() {
            v.write_le(&mut payload);
        }
    }
    let manifest = serde_json::to_vec(&Manifest {
        version: VERSION,
        meta,
        tensors: entries,
    })?;

    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(manifest.len() as u64).to_le_bytes())?;
        f.write_all(&manifest)?;
        f.write_all(&payload)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_header(bytes: &[u8]) -> Result<(Manifest, usize)> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("file truncated before header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + mlen {
        return Err(Error::Checkpoint("file truncated inside manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + mlen])
        .map_err(|e| Error::Checkpoint(format!("corrupt manifest: {e}")))?;
    Ok((manifest, 16 + mlen))
}

/// Read back a checkpoint written with [`save_tensors`].
///
/// Every stored tensor must have the dtype of `E`; mixing precisions in one
/// file is rejected rather than silently cast.
pub fn load_tensors<E: Element>(path: &Path) -> Result<(TensorMap<E>, serde_json::Value)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (manifest, payload_start) = read_header(&bytes)?;
    let payload = &bytes[payload_start..];
    let esize = E::DTYPE.size_bytes();
    let mut out = TensorMap::new();
    for entry in &manifest.tensors {
        if entry.dtype != E::DTYPE {
            return Err(Error::Checkpoint(format!(
                "tensor '{}' stored as {:?}, expected {:?}",
                entry.name, entry.dtype, E::DTYPE
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * esize;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "file truncated inside payload of '{}'",
                entry.name
            )));
        }
        let data: Vec<E> = payload[start..end]
            .chunks_exact(esize)
            .map(E::read_le)
            .collect();
        out.insert(entry.name.clone(), Tensor::from_op(entry.shape.clone(), data));
    }
    Ok((out, manifest.meta))
}

/// Read only the manifest (for inspection tooling).
pub fn read_manifest(path: &Path) -> Result<(Vec<ManifestEntry>, serde_json::Value)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (manifest, _) = read_header(&bytes)?;
    Ok((manifest.tensors, manifest.meta))
}
