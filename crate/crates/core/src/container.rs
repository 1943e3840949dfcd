//! The binary container shared by recordings, epoch sets and model files:
//!
//! ```text
//! "EEGB" | version: u8 = 1 | header_len: u32 LE | header: UTF-8 JSON | payload: f32 LE ...
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) const MAGIC: &[u8; 4] = b"EEGB";
pub(crate) const VERSION: u8 = 1;

pub(crate) fn encode<H: Serialize>(header: &H, payload: impl IntoIterator<Item = f32>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header larger than 4 GiB".into()))?;
    let mut out = Vec::with_capacity(9 + json.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f32>)> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing EEGB magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let body = &bytes[9..];
    if body.len() < len {
        return Err(Error::Corruption(format!(
            "header length {len} exceeds remaining {} bytes",
            body.len()
        )));
    }
    let header: H = serde_json::from_slice(&body[..len])
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let raw = &body[len..];
    if raw.len() % 4 != 0 {
        return Err(Error::Corruption(format!(
            "payload of {} bytes is not a whole number of float32 values",
            raw.len()
        )));
    }
    let payload = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, payload))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
