//! Checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "AESGCKPT"
//! header_len   u64
//! header       JSON      { format_version, net_config, train_config, iteration,
//!                          rng, sampler, optimizer_steps, arrays: [{name, shape, offset}] }
//! payload      f64 * N   arrays back to back, `offset` counts values
//! checksum     32 bytes  SHA-256 of everything above
//! ```
//!
//! Array names are `<group>/<parameter>` with groups `mapping`, `generator`,
//! `encoder`, `discriminator.<k>`, `mapping_ema`, `generator_ema` and
//! `adam.<optimizer>.<m|v>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::MinibatchSampler;
use crate::nn::{NetConfig, Networks, ParamArray, ParamSet};
use crate::trainer::{AdamState, TrainConfig, TrainState};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AESGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    net_config: NetConfig,
    train_config: TrainConfig,
    iteration: u64,
    rng: ChaCha8Rng,
    sampler: Option<MinibatchSampler>,
    optimizer_steps: BTreeMap<String, u64>,
    arrays: Vec<ArrayEntry>,
}

fn optimizers(state: &TrainState) -> Vec<(String, &AdamState)> {
    let mut v = vec![
        ("mapping".to_string(), &state.adam_mapping),
        ("generator".to_string(), &state.adam_generator),
        ("encoder".to_string(), &state.adam_encoder),
    ];
    for (k, a) in state.adam_discriminators.iter().enumerate() {
        v.push((format!("discriminator.{k}"), a));
    }
    v
}

fn groups(state: &TrainState) -> Vec<(String, &ParamSet)> {
    let mut v = vec![
        ("mapping".to_string(), &state.mapping),
        ("generator".to_string(), &state.generator),
        ("encoder".to_string(), &state.encoder),
    ];
    for (k, d) in state.discriminators.iter().enumerate() {
        v.push((format!("discriminator.{k}"), d));
    }
    v.push(("mapping_ema".to_string(), &state.mapping_ema));
    v.push(("generator_ema".to_string(), &state.generator_ema));
    for (name, a) in optimizers(state) {
        v.push((format!("adam.{name}.m"), &a.m));
        v.push((format!("adam.{name}.v"), &a.v));
    }
    v
}

/// Serializes `state` to bytes with a custom header version (tests use this to
/// produce files from the future).
pub fn encode_with_version(state: &TrainState, format_version: u32) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (group, set) in groups(state) {
        for (name, p) in set.iter() {
            arrays.push(ArrayEntry { name: format!("{group}/{name}"), shape: p.shape.clone(), offset });
            for v in &p.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            offset += p.data.len();
        }
    }
    let header = Header {
        format_version,
        net_config: state.config.net.clone(),
        train_config: state.config.clone(),
        iteration: state.iteration,
        rng: state.rng.clone(),
        sampler: state.sampler.clone(),
        optimizer_steps: optimizers(state).into_iter().map(|(k, a)| (k, a.step)).collect(),
        arrays,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    encode_with_version(state, FORMAT_VERSION)
}

/// Parses a checkpoint. Nothing is returned unless every check passes.
pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 16 {
        return Err(Error::Integrity(format!("checkpoint truncated: {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Integrity("checkpoint truncated inside the header".into()))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Integrity(format!("checkpoint header unreadable: {e}")))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Format(format!(
            "unsupported checkpoint format_version {}, expected {FORMAT_VERSION}",
            version.map_or("(missing)".to_string(), |v| v.to_string())
        )));
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let n_values: usize = header.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum();
    let expected = header_end + 8 * n_values + 32;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!("checkpoint is {} bytes, header describes {expected}", bytes.len())));
    }
    let body_end = expected - 32;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(Error::Integrity("checkpoint checksum mismatch".into()));
    }
    let payload = &bytes[header_end..body_end];
    let mut sets: BTreeMap<String, ParamSet> = BTreeMap::new();
    for a in &header.arrays {
        let len: usize = a.shape.iter().product();
        if a.offset + len > n_values {
            return Err(Error::Integrity(format!("array {} lies outside the payload", a.name)));
        }
        let data = payload[8 * a.offset..8 * (a.offset + len)]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (group, name) = a.name.split_once('/').ok_or_else(|| Error::Format(format!("bad array name {}", a.name)))?;
        sets.entry(group.to_string()).or_default().insert(name, ParamArray { shape: a.shape.clone(), data });
    }
    build_state(header, sets)
}

fn take(sets: &mut BTreeMap<String, ParamSet>, group: &str) -> Result<ParamSet> {
    sets.remove(group).ok_or_else(|| Error::Format(format!("checkpoint has no {group} arrays")))
}

fn same_layout(name: &str, got: &ParamSet, want: &ParamSet) -> Result<()> {
    let a: Vec<(&String, &Vec<usize>)> = got.iter().map(|(k, p)| (k, &p.shape)).collect();
    let b: Vec<(&String, &Vec<usize>)> = want.iter().map(|(k, p)| (k, &p.shape)).collect();
    if a != b {
        return Err(Error::Format(format!("{name} parameters do not match the configured architecture")));
    }
    Ok(())
}

fn build_state(header: Header, mut sets: BTreeMap<String, ParamSet>) -> Result<TrainState> {
    let config = header.train_config;
    if config.net != header.net_config {
        return Err(Error::Format("net_config disagrees with train_config.net".into()));
    }
    config.validate()?;
    let nets = Networks::new(&config.net)?;
    let fresh = TrainState::init(&config, &nets)?;
    let mut adam = |name: &str| -> Result<AdamState> {
        let m = take(&mut sets, &format!("adam.{name}.m"))?;
        let v = take(&mut sets, &format!("adam.{name}.v"))?;
        let step = *header.optimizer_steps.get(name).ok_or_else(|| Error::Format(format!("no step count for {name}")))?;
        Ok(AdamState { m, v, step })
    };
    let n_d = config.n_discriminators();
    let adam_mapping = adam("mapping")?;
    let adam_generator = adam("generator")?;
    let adam_encoder = adam("encoder")?;
    let adam_discriminators = (0..n_d).map(|k| adam(&format!("discriminator.{k}"))).collect::<Result<Vec<_>>>()?;
    let state = TrainState {
        iteration: header.iteration,
        mapping: take(&mut sets, "mapping")?,
        generator: take(&mut sets, "generator")?,
        encoder: take(&mut sets, "encoder")?,
        discriminators: (0..n_d).map(|k| take(&mut sets, &format!("discriminator.{k}"))).collect::<Result<Vec<_>>>()?,
        mapping_ema: take(&mut sets, "mapping_ema")?,
        generator_ema: take(&mut sets, "generator_ema")?,
        adam_mapping,
        adam_generator,
        adam_encoder,
        adam_discriminators,
        rng: header.rng,
        sampler: header.sampler,
        config,
    };
    if let Some(extra) = sets.keys().next() {
        return Err(Error::Format(format!("unexpected array group {extra}")));
    }
    same_layout("mapping", &state.mapping, &fresh.mapping)?;
    same_layout("generator", &state.generator, &fresh.generator)?;
    same_layout("encoder", &state.encoder, &fresh.encoder)?;
    same_layout("mapping_ema", &state.mapping_ema, &fresh.mapping)?;
    same_layout("generator_ema", &state.generator_ema, &fresh.generator)?;
    for d in &state.discriminators {
        same_layout("discriminator", d, &fresh.discriminators[0])?;
    }
    for (a, f) in [(&state.adam_mapping, &fresh.mapping), (&state.adam_generator, &fresh.generator), (&state.adam_encoder, &fresh.encoder)] {
        same_layout("optimizer", &a.m, f)?;
        same_layout("optimizer", &a.v, f)?;
    }
    for a in &state.adam_discriminators {
        same_layout("optimizer", &a.m, &fresh.discriminators[0])?;
        same_layout("optimizer", &a.v, &fresh.discriminators[0])?;
    }
    Ok(state)
}

/// Writes atomically: the previous file at `path` survives a failed write.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode(state)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    decode(&bytes)
}
