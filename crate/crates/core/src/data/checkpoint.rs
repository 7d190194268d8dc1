//! Binary checkpoint: `IALCKPT`, 1-byte version, u32 LE manifest length,
//! JSON manifest, then the parameters as little-endian f32 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, CELL, CONTRIBUTION_METHOD};
use crate::nap::NapConfig;
use crate::tensor::{Matrix, ParamVector, Segment};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"IALCKPT";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub model: ModelConfig,
    pub nap: NapConfig,
    /// Round the parameters belong to (0 = pretrained).
    pub round: usize,
    /// Free-form session settings carried alongside the weights.
    pub session: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct SegmentEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    segments: Vec<SegmentEntry>,
    cell: String,
    contribution: String,
    model: ModelConfig,
    nap: NapConfig,
    round: usize,
    #[serde(default)]
    session: serde_json::Value,
    payload_sha256: String,
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(ck.params.n_params() * 4);
    for s in ck.params.segments() {
        for &v in s.value.as_slice() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        segments: ck
            .params
            .segments()
            .iter()
            .map(|s| SegmentEntry {
                name: s.name.clone(),
                shape: [s.value.rows(), s.value.cols()],
            })
            .collect(),
        cell: CELL.into(),
        contribution: CONTRIBUTION_METHOD.into(),
        model: ck.model.clone(),
        nap: ck.nap.clone(),
        round: ck.round,
        session: ck.session.clone(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let text = serde_json::to_vec(&manifest)?;
    let len = u32::try_from(text.len()).map_err(|_| Error::Format("manifest too large".into()))?;
    let mut out = Vec::with_capacity(12 + text.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let m = CHECKPOINT_MAGIC.len();
    if bytes.len() < m || &bytes[..m] != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing checkpoint magic".into()));
    }
    let version = *bytes.get(m).ok_or_else(|| Error::Corrupt("truncated header".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len_bytes = bytes.get(m + 1..m + 5).ok_or_else(|| Error::Corrupt("truncated header".into()))?;
    let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    let body = m + 5;
    let text = bytes
        .get(body..body + len)
        .ok_or_else(|| Error::Corrupt("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(text).map_err(|e| Error::Corrupt(format!("unreadable manifest: {e}")))?;
    let payload = &bytes[body + len..];
    let expected: usize = manifest.segments.iter().map(|s| s.shape[0] * s.shape[1] * 4).sum();
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload holds {} bytes, manifest expects {expected}",
            payload.len()
        )));
    }
    if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(Error::Corrupt("payload digest mismatch".into()));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let segments = manifest
        .segments
        .iter()
        .map(|s| {
            let [r, c] = s.shape;
            Segment {
                name: s.name.clone(),
                value: Matrix::from_vec(r, c, values.by_ref().take(r * c).collect()),
            }
        })
        .collect();
    let params = ParamVector::new(segments).map_err(|e| Error::Corrupt(e.to_string()))?;
    if params.segments().iter().map(|s| &s.name).ne(manifest.segments.iter().map(|s| &s.name)) {
        return Err(Error::Corrupt("segments are not in canonical order".into()));
    }
    Ok(Checkpoint {
        params,
        model: manifest.model,
        nap: manifest.nap,
        round: manifest.round,
        session: manifest.session,
    })
}

pub fn checkpoint_save(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(ck)?)?;
    Ok(())
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    checkpoint_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionModel, Task};

    fn sample() -> Checkpoint {
        let cfg = ModelConfig::new(3, 4, 1, Task::Binary);
        let params = AttentionModel::new(cfg.clone()).unwrap().init_params(5);
        Checkpoint {
            params,
            model: cfg,
            nap: NapConfig::default(),
            round: 2,
            session: serde_json::json!({"k": 16}),
        }
    }

    #[test]
    fn roundtrip_is_stable_at_f32() {
        let bytes = checkpoint_to_bytes(&sample()).unwrap();
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(checkpoint_to_bytes(&back).unwrap(), bytes);
        assert_eq!(back.round, 2);
        assert_eq!(back.session["k"], 16);
    }

    #[test]
    fn manifest_segments_sorted() {
        let bytes = checkpoint_to_bytes(&sample()).unwrap();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let m: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        let names: Vec<&str> = m["segments"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["name"].as_str().unwrap())
            .collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(m["cell"], "gru");
    }

    #[test]
    fn corruption_detected() {
        let bytes = checkpoint_to_bytes(&sample()).unwrap();
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 0x01;
        assert!(matches!(checkpoint_from_bytes(&flipped), Err(Error::Corrupt(_))));
        assert!(matches!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&magic), Err(Error::Format(_))));
        let mut version = bytes;
        version[7] = 9;
        assert!(matches!(checkpoint_from_bytes(&version), Err(Error::Format(_))));
    }
}
