//! Self-describing binary files: an 8-byte magic, a little-endian `u32`
//! format version, a `u64` header length, a JSON header, then the declared
//! `f64` arrays in little-endian row-major order.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATA_MAGIC: [u8; 8] = *b"TFPODATA";
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"TFPOCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ArraySpec {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    format_version: u32,
    arrays: Vec<ArraySpec>,
    meta: H,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub spec: ArraySpec,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let spec = ArraySpec { name: name.into(), shape };
        if spec.len() != data.len() {
            return Err(Error::ShapeMismatch { expected: spec.len(), got: data.len() });
        }
        Ok(NamedArray { spec, data })
    }
}

pub fn encode<H: Serialize>(magic: [u8; 8], meta: &H, arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let env = Envelope { format_version: FORMAT_VERSION, arrays: arrays.iter().map(|a| a.spec.clone()).collect(), meta };
    let header = serde_json::to_vec_pretty(&env)?;
    let payload: usize = arrays.iter().map(|a| a.data.len() * 8).sum();
    let mut out = Vec::with_capacity(20 + header.len() + payload);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for a in arrays {
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(magic: [u8; 8], bytes: &[u8]) -> Result<(H, Vec<NamedArray>)> {
    if bytes.len() < 20 || bytes[..8] != magic {
        return Err(Error::Format(format!("missing {} magic", String::from_utf8_lossy(&magic))));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if hlen > body.len() {
        return Err(Error::Format("header length exceeds file size".into()));
    }
    let env: Envelope<H> = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Format(e.to_string()))?;
    if env.format_version != version {
        return Err(Error::Format("header and preamble versions differ".into()));
    }
    let payload = &body[hlen..];
    let expected: usize = env.arrays.iter().map(|a| a.len() * 8).sum();
    if expected != payload.len() {
        return Err(Error::Format(format!("payload holds {} bytes, header declares {expected}", payload.len())));
    }
    let mut arrays = Vec::with_capacity(env.arrays.len());
    let mut pos = 0;
    for spec in env.arrays {
        let n = spec.len();
        let data = payload[pos..pos + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        pos += 8 * n;
        arrays.push(NamedArray { spec, data });
    }
    Ok((env.meta, arrays))
}

pub fn write_file<H: Serialize>(path: &Path, magic: [u8; 8], meta: &H, arrays: &[NamedArray]) -> Result<()> {
    let bytes = encode(magic, meta, arrays)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_file<H: DeserializeOwned>(path: &Path, magic: [u8; 8]) -> Result<(H, Vec<NamedArray>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(magic, &bytes)
}

/// Removes and returns the array called `name`.
pub fn take(arrays: &mut Vec<NamedArray>, name: &str) -> Option<NamedArray> {
    let i = arrays.iter().position(|a| a.spec.name == name)?;
    Some(arrays.remove(i))
}
