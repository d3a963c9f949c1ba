//! Checkpoint container: 8-byte magic, u64 LE header length, JSON header,
//! then every tensor as little-endian f32 in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Layer;
use super::model::{ArchitectureDescriptor, Autoencoder};
use super::AutoencError;
use crate::Scalar;

const MAGIC: &[u8; 8] = b"AECKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: ArchitectureDescriptor,
    pub init_seed: u64,
    pub epoch: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub tensors: Vec<ParamEntry>,
}

/// Trainable parameters followed by batch-norm running statistics.
fn tensors<S: Scalar>(model: &Autoencoder<S>) -> Vec<(String, Vec<usize>, &[S])> {
    let mut out: Vec<(String, Vec<usize>, &[S])> =
        model.params().into_iter().map(|p| (p.name.clone(), p.shape.clone(), p.value.as_slice())).collect();
    for l in &model.layers {
        if let Layer::BatchNorm(b) = l {
            let base = b.gamma.name.trim_end_matches(".gamma");
            out.push((format!("{base}.running_mean"), vec![b.channels], &b.running_mean));
            out.push((format!("{base}.running_var"), vec![b.channels], &b.running_var));
        }
    }
    out
}

pub fn save_checkpoint<S: Scalar>(
    model: &Autoencoder<S>,
    path: &Path,
    epoch: usize,
    loss: f64,
    config_hash: Option<&str>,
) -> Result<(), AutoencError> {
    let ts = tensors(model);
    let mut entries = Vec::with_capacity(ts.len());
    let mut blob = Vec::new();
    let mut offset = 0;
    for (name, shape, vals) in &ts {
        entries.push(ParamEntry { name: name.clone(), shape: shape.clone(), offset });
        offset += vals.len();
        for v in vals.iter() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        arch: model.arch.clone(),
        init_seed: model.init_seed,
        epoch,
        loss,
        config_hash: config_hash.map(str::to_string),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| AutoencError::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(json.len() as u64).to_le_bytes())?;
    f.write_all(&json)?;
    f.write_all(&blob)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(Autoencoder<S>, CheckpointHeader), AutoencError> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| AutoencError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let blob = &bytes[16 + hlen..];
    if blob.len() % 4 != 0 {
        return Err(bad("blob length is not a multiple of 4"));
    }
    let vals: Vec<S> = blob.chunks_exact(4).map(|c| S::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
    let mut model = Autoencoder::<S>::new(header.arch.clone(), header.init_seed)?;
    let expected = tensors(&model).into_iter().map(|(n, s, _)| (n, s)).collect::<Vec<_>>();
    if expected.len() != header.tensors.len() {
        return Err(bad("tensor count does not match architecture"));
    }
    let mut flat = Vec::new();
    let mut stats = Vec::new();
    for ((name, shape), e) in expected.iter().zip(&header.tensors) {
        if name != &e.name || shape != &e.shape {
            return Err(bad(&format!("tensor {} {:?} does not match {} {:?}", e.name, e.shape, name, shape)));
        }
        let n: usize = shape.iter().product();
        let src = vals.get(e.offset..e.offset + n).ok_or_else(|| bad("truncated blob"))?;
        if name.ends_with(".running_mean") || name.ends_with(".running_var") {
            stats.push(src.to_vec());
        } else {
            flat.extend_from_slice(src);
        }
    }
    model.set_flat_params(&flat);
    let pairs: Vec<(Vec<S>, Vec<S>)> = stats.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    model.set_running_stats(&pairs);
    Ok((model, header))
}
