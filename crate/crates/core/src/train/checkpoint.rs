//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LNSG"
//! 4       4     version (u32) = 1
//! 8       4     config document length L (u32)
//! 12      L     config document, UTF-8 JSON: {"unet", "train", "seed", "epoch"}
//! 12+L    8     weight count N (u64)
//! 20+L    4N    weights as f32, in model parameter order
//! ```
//!
//! Parameter order is the construction order of [`build_unet`]: encoder
//! levels shallow to deep, bottleneck, decoder levels deep to shallow, head;
//! weight before bias within each layer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::unet::{build_unet, UNetConfig, UNetModel};

pub const MAGIC: [u8; 4] = *b"LNSG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub unet: UNetConfig,
    pub train: Option<TrainConfig>,
    /// Initialization seed of the model.
    pub seed: u64,
    pub epoch: usize,
}

pub fn encode_checkpoint(model: &UNetModel, train: Option<&TrainConfig>, epoch: usize) -> Vec<u8> {
    let meta = CheckpointMeta { unet: model.config, train: train.cloned(), seed: model.seed(), epoch };
    let doc = serde_json::to_vec(&meta).expect("checkpoint metadata serializes");
    let weights = model.params.flatten();
    let mut out = Vec::with_capacity(20 + doc.len() + 4 * weights.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(doc.len() as u32).to_le_bytes());
    out.extend_from_slice(&doc);
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in weights {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(bad(format!("file ends inside the {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<(UNetModel, CheckpointMeta)> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}, expected \"LNSG\"")));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
    }
    let doc_len = u32::from_le_bytes(take(&mut bytes, 4, "document length")?.try_into().unwrap()) as usize;
    let doc = take(&mut bytes, doc_len, "config document")?;
    let meta: CheckpointMeta =
        serde_json::from_slice(doc).map_err(|e| bad(format!("malformed config document: {e}")))?;
    let mut model = build_unet(&meta.unet, meta.seed).map_err(|e| bad(format!("embedded config invalid: {e}")))?;
    let declared = u64::from_le_bytes(take(&mut bytes, 8, "weight count")?.try_into().unwrap());
    let expected = model.param_count();
    if declared != expected as u64 {
        return Err(bad(format!("config implies {expected} weights, header declares {declared}")));
    }
    if bytes.len() != 4 * expected {
        return Err(bad(format!(
            "expected {expected} weights, found {} bytes ({} weights)",
            bytes.len(),
            bytes.len() / 4
        )));
    }
    let weights: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    model.params.load_flat(&weights)?;
    Ok((model, meta))
}

pub fn save_checkpoint(
    model: &UNetModel,
    train: Option<&TrainConfig>,
    epoch: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model, train, epoch)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UNetModel, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
