//! Binary checkpoint: 8-byte magic, little-endian u64 spec hash, u64 value
//! count, then every parameter as a little-endian f64 in shape order. The
//! `NetSpec` is written next to it as `<file>.json`.

use std::path::{Path, PathBuf};

use super::{NetError, NetSpec, ParamVector};

pub const MAGIC: &[u8; 8] = b"DVELAB01";

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(spec: &NetSpec, params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&spec.spec_hash().to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(spec: &NetSpec, bytes: &[u8]) -> Result<ParamVector, NetError> {
    let bad = |m: &str| NetError::Checkpoint(m.to_string());
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    if word(8) != spec.spec_hash() {
        return Err(bad("spec hash mismatch"));
    }
    let n = word(16) as usize;
    if bytes.len() != 24 + 8 * n {
        return Err(bad("truncated payload"));
    }
    let values = bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    ParamVector::from_values(spec.shapes(), values)
}

pub fn save(path: &Path, spec: &NetSpec, params: &ParamVector) -> Result<(), NetError> {
    std::fs::write(path, encode(spec, params))?;
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(spec)?)?;
    Ok(())
}

/// Reads the sidecar spec, then the parameters it describes.
pub fn load(path: &Path) -> Result<(NetSpec, ParamVector), NetError> {
    let spec: NetSpec = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let params = decode(&spec, &std::fs::read(path)?)?;
    Ok((spec, params))
}
