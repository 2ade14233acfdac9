//! Shared framing for model files: magic, version, JSON header, f32 payload.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FRAME_VERSION: u32 = 1;

pub(crate) fn write_framed<H: Serialize>(
    path: &Path,
    magic: &[u8; 4],
    header: &H,
    payload: &[f64],
) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Argument(e.to_string()))?;
    let bytes = frame_bytes(magic, &json, payload);
    atomic_write(path, &bytes)
}

fn frame_bytes(magic: &[u8; 4], json: &[u8], payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + json.len() + 4 * payload.len());
    out.extend_from_slice(magic);
    out.write_u32::<LittleEndian>(FRAME_VERSION).unwrap();
    out.write_u32::<LittleEndian>(json.len() as u32).unwrap();
    out.extend_from_slice(json);
    for v in payload {
        out.write_f32::<LittleEndian>(*v as f32).unwrap();
    }
    out
}

/// Write to a temporary sibling, flush to disk, rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp-{}", std::process::id()));
    let tmp = path.with_file_name(name);
    let write = || -> std::io::Result<()> {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_framed<H: DeserializeOwned>(
    path: &Path,
    magic: &'static [u8; 4],
) -> Result<(H, Vec<f64>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != magic || LittleEndian::read_u32(&bytes[4..8]) != FRAME_VERSION
    {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: std::str::from_utf8(magic).unwrap_or("model"),
        });
    }
    let json_len = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let bad = |reason: String| Error::ModelFile {
        path: path.to_path_buf(),
        reason,
    };
    if 12 + json_len > bytes.len() {
        return Err(bad("header length exceeds file size".into()));
    }
    let header: H =
        serde_json::from_slice(&bytes[12..12 + json_len]).map_err(|e| bad(e.to_string()))?;
    let body = &bytes[12 + json_len..];
    if body.len() % 4 != 0 {
        return Err(bad(format!("payload of {} bytes is not a whole number of f32", body.len())));
    }
    let payload = body
        .chunks_exact(4)
        .map(|c| LittleEndian::read_f32(c) as f64)
        .collect();
    Ok((header, payload))
}

/// Short content hash used to identify model files in reports.
pub fn file_id(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}
