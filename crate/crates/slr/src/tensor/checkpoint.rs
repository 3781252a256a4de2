//! Checkpoint format: a JSON manifest plus a sidecar binary of little-endian
//! `f32` arrays concatenated in manifest order.

use super::{Activation, ParamSet};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub step_count: u64,
    pub config_hash: String,
    pub networks: Vec<NetworkEntry>,
    pub extras: Vec<ArrayEntry>,
    pub arrays: Vec<ArrayEntry>,
}

/// Everything one training run checkpoints: named networks plus loose arrays
/// (for example the policy log-std).
#[derive(Debug, Clone)]
pub struct CheckpointBundle {
    pub step_count: u64,
    pub config_hash: String,
    pub networks: Vec<(String, ParamSet)>,
    pub extras: Vec<(String, Vec<f32>)>,
}

impl CheckpointBundle {
    pub fn network(&self, name: &str) -> Option<&ParamSet> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn extra(&self, name: &str) -> Option<&[f32]> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Write `<base>.json` and `<base>.bin`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let mut arrays = Vec::new();
        let mut blob: Vec<u8> = Vec::new();
        for (name, net) in &self.networks {
            for (li, layer) in net.layers.iter().enumerate() {
                arrays.push(ArrayEntry {
                    name: format!("{name}/layer{li}/weight"),
                    rows: layer.out_dim,
                    cols: layer.in_dim,
                });
                push_f32(&mut blob, &layer.w);
                arrays.push(ArrayEntry {
                    name: format!("{name}/layer{li}/bias"),
                    rows: 1,
                    cols: layer.out_dim,
                });
                push_f32(&mut blob, &layer.b);
            }
        }
        let mut extras = Vec::new();
        for (name, data) in &self.extras {
            extras.push(ArrayEntry { name: name.clone(), rows: 1, cols: data.len() });
            arrays.push(ArrayEntry { name: name.clone(), rows: 1, cols: data.len() });
            push_f32(&mut blob, data);
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            step_count: self.step_count,
            config_hash: self.config_hash.clone(),
            networks: self
                .networks
                .iter()
                .map(|(name, net)| NetworkEntry {
                    name: name.clone(),
                    layer_sizes: net.layer_sizes(),
                    activation: net.activation,
                })
                .collect(),
            extras,
            arrays,
        };
        if let Some(dir) = base.parent() {
            fs::create_dir_all(dir)?;
        }
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::File::create(base.with_extension("json"))?.write_all(json.as_bytes())?;
        fs::File::create(base.with_extension("bin"))?.write_all(&blob)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let json = fs::read_to_string(base.with_extension("json"))?;
        let manifest: Manifest =
            serde_json::from_str(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let mut blob = Vec::new();
        fs::File::open(base.with_extension("bin"))?.read_to_end(&mut blob)?;
        let expected: usize = manifest.arrays.iter().map(|a| a.rows * a.cols * 4).sum();
        if blob.len() != expected {
            return Err(Error::Checkpoint(format!(
                "sidecar length {} does not match manifest ({expected})",
                blob.len()
            )));
        }

        let mut offset = 0usize;
        let mut read_array = |entry: &ArrayEntry| -> Vec<f32> {
            let n = entry.rows * entry.cols;
            let out: Vec<f32> = blob[offset..offset + n * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            offset += n * 4;
            out
        };

        let mut arrays_iter = manifest.arrays.iter();
        let mut networks = Vec::new();
        for net_entry in &manifest.networks {
            let mut net = ParamSet::zeros(&net_entry.layer_sizes, net_entry.activation);
            for layer in &mut net.layers {
                let w_entry = arrays_iter
                    .next()
                    .ok_or_else(|| Error::Checkpoint("manifest truncated".into()))?;
                layer.w = read_array(w_entry);
                let b_entry = arrays_iter
                    .next()
                    .ok_or_else(|| Error::Checkpoint("manifest truncated".into()))?;
                layer.b = read_array(b_entry);
            }
            net.validate()?;
            networks.push((net_entry.name.clone(), net));
        }
        let mut extras = Vec::new();
        for extra in &manifest.extras {
            let entry = arrays_iter
                .next()
                .ok_or_else(|| Error::Checkpoint("manifest truncated".into()))?;
            extras.push((extra.name.clone(), read_array(entry)));
        }
        Ok(CheckpointBundle {
            step_count: manifest.step_count,
            config_hash: manifest.config_hash,
            networks,
            extras,
        })
    }
}

fn push_f32(blob: &mut Vec<u8>, data: &[f32]) {
    blob.reserve(data.len() * 4);
    for v in data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
}

/// FNV-1a over bytes, hex encoded. Used to fingerprint resolved configs.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}
