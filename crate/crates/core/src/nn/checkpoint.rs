//! Binary checkpoint format.
//!
//! Layout: magic `SERCNN1\0`, little-endian u32 header length, UTF-8 JSON
//! header, then every parameter as little-endian f32 in the fixed order
//! conv_a w/b, bn_a gamma/beta/running mean/running var, conv_b w/b,
//! bn_b gamma/beta/running mean/running var, fc w/b, aux w/b.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::features::FeatureConfig;
use crate::dsp::norm::NormStats;
use crate::error::{Result, SerError};
use crate::nn::model::{init_params, ModelDims, ModelParams};

pub const MAGIC: &[u8; 8] = b"SERCNN1\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dims: ModelDims,
    pub feature_config: Option<FeatureConfig>,
    pub norm: Option<NormStats>,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

fn stored_arrays(p: &ModelParams) -> Vec<&[f64]> {
    let mut v: Vec<&[f64]> = vec![
        &p.conv_a.weights,
        &p.conv_a.bias,
        &p.bn_a.gamma,
        &p.bn_a.beta,
        &p.bn_a.running_mean,
        &p.bn_a.running_var,
        &p.conv_b.weights,
        &p.conv_b.bias,
        &p.bn_b.gamma,
        &p.bn_b.beta,
        &p.bn_b.running_mean,
        &p.bn_b.running_var,
        &p.fc.weights,
        &p.fc.bias,
    ];
    if let Some(a) = &p.aux {
        v.push(&a.weights);
        v.push(&a.bias);
    }
    v
}

fn stored_arrays_mut(p: &mut ModelParams) -> Vec<&mut Vec<f64>> {
    let mut v: Vec<&mut Vec<f64>> = vec![
        &mut p.conv_a.weights,
        &mut p.conv_a.bias,
        &mut p.bn_a.gamma,
        &mut p.bn_a.beta,
        &mut p.bn_a.running_mean,
        &mut p.bn_a.running_var,
        &mut p.conv_b.weights,
        &mut p.conv_b.bias,
        &mut p.bn_b.gamma,
        &mut p.bn_b.beta,
        &mut p.bn_b.running_mean,
        &mut p.bn_b.running_var,
        &mut p.fc.weights,
        &mut p.fc.bias,
    ];
    if let Some(a) = &mut p.aux {
        v.push(&mut a.weights);
        v.push(&mut a.bias);
    }
    v
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ck.header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for arr in stored_arrays(&ck.params) {
        for &v in arr {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(SerError::Malformed("not a model checkpoint".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body_at = 12 + hlen;
    if bytes.len() < body_at {
        return Err(SerError::Malformed("truncated checkpoint header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..body_at])?;
    let mut params = init_params(header.seed, &header.dims)?;
    let body = &bytes[body_at..];
    let expected: usize = stored_arrays(&params).iter().map(|a| a.len()).sum();
    if body.len() != expected * 4 {
        return Err(SerError::Malformed(format!(
            "checkpoint body has {} bytes, model needs {}",
            body.len(),
            expected * 4
        )));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for arr in stored_arrays_mut(&mut params) {
        for v in arr.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(Checkpoint { header, params })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SerError::io(parent, e))?;
    }
    fs::write(path, encode_checkpoint(ck)?).map_err(|e| SerError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path).map_err(|e| SerError::io(path, e))?)
}
