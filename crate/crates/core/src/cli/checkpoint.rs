//! Parameter checkpoints.
//!
//! A checkpoint is one line of JSON describing the layers, a `\n`, and then
//! every parameter as a little-endian `f64`: layer by layer, the row-major
//! weight matrix (`out_dim x in_dim`) followed by the bias.
//!
//! ```text
//! {"format":"mwe-params","version":1,"endianness":"little","dtype":"f64","layers":[...]}\n
//! <8 * param_count bytes>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LayerSpec, ParamSet};

const FORMAT: &str = "mwe-params";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub dtype: String,
    pub layers: Vec<LayerSpec>,
}

impl CheckpointHeader {
    fn for_params(p: &ParamSet) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            endianness: "little".into(),
            dtype: "f64".into(),
            layers: p.specs(),
        }
    }

    /// Number of payload bytes the header announces.
    pub fn payload_len(&self) -> usize {
        8 * self
            .layers
            .iter()
            .map(|l| l.out_dim * l.in_dim + l.out_dim)
            .sum::<usize>()
    }
}

pub fn encode_checkpoint(p: &ParamSet) -> Result<Vec<u8>> {
    let header = serde_json::to_string(&CheckpointHeader::for_params(p))?;
    let mut out = Vec::with_capacity(header.len() + 1 + 8 * p.param_count());
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for v in p.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet> {
    let corrupt = |msg: String| Error::CorruptCheckpoint(msg);
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("no header terminator".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(corrupt(format!("unsupported format {} v{}", header.format, header.version)));
    }
    if header.endianness != "little" || header.dtype != "f64" {
        return Err(corrupt(format!("unsupported encoding {} {}", header.endianness, header.dtype)));
    }
    let payload = &bytes[newline + 1..];
    if payload.len() != header.payload_len() {
        return Err(corrupt(format!(
            "header announces {} payload bytes, found {}",
            header.payload_len(),
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks are 8 bytes")))
        .collect();
    ParamSet::from_flat(&header.layers, &values).map_err(|e| corrupt(e.to_string()))
}

/// Writes atomically: the file appears complete or not at all.
pub fn save_checkpoint(p: &ParamSet, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(p)?;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, mlp_specs};

    #[test]
    fn round_trip_is_bitwise() {
        let p = init_params(&mlp_specs(3, &[4], 2), 11).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        let bits = |q: &ParamSet| q.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&p));
    }

    #[test]
    fn truncation_is_corruption() {
        let p = init_params(&mlp_specs(3, &[4], 2), 11).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint(cut), Err(Error::CorruptCheckpoint(_))));
        assert!(matches!(decode_checkpoint(b"{}"), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = init_params(&mlp_specs(2, &[3], 2), 1).unwrap();
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
    }
}
