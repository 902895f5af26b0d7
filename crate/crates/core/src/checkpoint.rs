//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MCLS" | version: u32 | header_len: u64 | header: UTF-8 JSON | payload
//! ```
//!
//! The header holds the model config, a manifest of named `f64` arrays with
//! shapes and byte offsets into the payload, and free-form string metadata.
//! Arrays are stored in name order, so the same parameters always produce the
//! same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{ModelConfig, ParamSet};
use crate::error::{Error, Result};
use crate::numkernel::Tensor;

pub const MAGIC: &[u8; 4] = b"MCLS";
pub const FORMAT_VERSION: u32 = 1;
const F64_BYTES: u64 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    arrays: Vec<ArrayEntry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Model config, parameters and metadata as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ParamSet) -> Self {
        Self {
            config,
            params,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::with_capacity(self.params.len());
        let mut offset = 0u64;
        for (name, t) in self.params.iter() {
            arrays.push(ArrayEntry {
                name: name.clone(),
                dtype: "f64".into(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len() as u64 * F64_BYTES;
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            arrays,
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: String| Err(Error::Format(m));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return fail("not a checkpoint (bad magic)".into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return fail(format!("unsupported checkpoint version {version}"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let payload_start = 16u64
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| Error::Format(format!("header length {header_len} exceeds file size")))?
            as usize;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        header.config.validate()?;
        let payload = &bytes[payload_start..];

        let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(header.arrays.len());
        let mut params = ParamSet::new();
        for a in &header.arrays {
            if a.dtype != "f64" {
                return fail(format!("array {} has unsupported dtype {}", a.name, a.dtype));
            }
            let n: usize = a.shape.iter().product();
            let len = n as u64 * F64_BYTES;
            let end = a.offset.checked_add(len).filter(|&e| e <= payload.len() as u64);
            let Some(end) = end else {
                return fail(format!("array {} lies outside the payload", a.name));
            };
            if params.contains(&a.name) {
                return fail(format!("array {} listed twice", a.name));
            }
            spans.push((a.offset, end, &a.name));
            let data = payload[a.offset as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(a.shape.clone(), data)
                .map_err(|_| Error::Format(format!("array {} has an invalid shape {:?}", a.name, a.shape)))?;
            params.insert(a.name.clone(), t);
        }
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return fail(format!("arrays {} and {} overlap", w[0].2, w[1].2));
            }
        }
        Ok(Self {
            config: header.config,
            params,
            meta: header.meta,
        })
    }

    /// Write atomically: a sibling temp file is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Replace `path` with `bytes` via a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
