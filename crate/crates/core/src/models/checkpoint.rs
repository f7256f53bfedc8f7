//! Checkpoint container.
//!
//! ```text
//! "TXCK" | u32 version | u32 header length | header JSON | tensor payload
//! ```
//!
//! The JSON header carries the architecture, its config hash, seeds, network
//! kinds and the name and shape of every tensor. The payload is the tensors in
//! header order, little-endian, in the header's dtype. Loading recomputes the
//! architecture hash and refuses a mismatch.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nets::{EncoderKind, MappingKind, SynthesisKind};
use super::params::ParamStore;
use super::{ArchConfig, Encoder, LatentW, MappingNet, ModelBundle, SynthesisNet};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TXCK";
const PARAM_MAGIC: &[u8; 4] = b"TXPW";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupHeader {
    pub group: String,
    pub tensors: Vec<TensorHeader>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub arch: ArchConfig,
    pub dtype: String,
    pub seeds: BTreeMap<String, u64>,
    pub mapping_kind: MappingKind,
    pub synthesis_kind: SynthesisKind,
    pub encoder_kind: EncoderKind,
    pub encoder_trained: bool,
    pub mean_w: Option<Vec<f64>>,
    pub groups: Vec<GroupHeader>,
}

fn group_header<T: Scalar>(name: &str, store: &ParamStore<T>) -> GroupHeader {
    GroupHeader {
        group: name.to_string(),
        tensors: store
            .names()
            .iter()
            .zip(store.tensors())
            .map(|(n, t)| TensorHeader { name: n.clone(), shape: t.shape().to_vec() })
            .collect(),
    }
}

fn frame(magic: &[u8; 4], header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

fn unframe<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 12 || &bytes[..4] != magic {
        return Err(Error::Checkpoint(format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    Ok((&bytes[12..12 + hlen], &bytes[12 + hlen..]))
}

fn write_store<T: Scalar>(store: &ParamStore<T>, out: &mut Vec<u8>) {
    for t in store.tensors() {
        for v in t.data() {
            v.write_le(out);
        }
    }
}

/// Reads tensors described by `group` from `payload` starting at `*offset`.
fn read_group<T: Scalar>(group: &GroupHeader, payload: &[u8], offset: &mut usize) -> Result<ParamStore<T>> {
    let mut store = ParamStore::default();
    for th in &group.tensors {
        let n: usize = th.shape.iter().product();
        let bytes = n * T::BYTES;
        if *offset + bytes > payload.len() {
            return Err(Error::Checkpoint(format!("payload truncated in {}.{}", group.group, th.name)));
        }
        let data = payload[*offset..*offset + bytes].chunks_exact(T::BYTES).map(T::read_le).collect();
        *offset += bytes;
        store.push(th.name.clone(), Tensor::from_vec(&th.shape, data));
    }
    Ok(store)
}

pub fn save_checkpoint<T: Scalar>(bundle: &ModelBundle<T>, path: &Path) -> Result<()> {
    let parts: [(&str, &ParamStore<T>); 5] = [
        ("mapping", &bundle.mapping.params),
        ("synthesis", &bundle.synthesis.params),
        ("discriminator", &bundle.discriminator.params),
        ("encoder", &bundle.encoder.params),
        ("features", &bundle.features().params),
    ];
    let header = CheckpointHeader {
        config_hash: bundle.arch.hash(),
        arch: bundle.arch.clone(),
        dtype: T::DTYPE.to_string(),
        seeds: bundle.seeds.clone(),
        mapping_kind: bundle.mapping.kind,
        synthesis_kind: bundle.synthesis.kind,
        encoder_kind: bundle.encoder.kind,
        encoder_trained: bundle.encoder_trained,
        mean_w: bundle.mean_w.as_ref().map(|w| w.values().iter().map(|v| v.to_f64_lossy()).collect()),
        groups: parts.iter().map(|(n, s)| group_header(n, s)).collect(),
    };
    let mut payload = Vec::new();
    for (_, s) in &parts {
        write_store(s, &mut payload);
    }
    write_atomic(path, &frame(MAGIC, &serde_json::to_vec(&header)?, &payload))
}

/// Loads a checkpoint, verifying its architecture hash and, when given, that it equals `expected_hash`.
pub fn load_checkpoint<T: Scalar>(path: &Path, expected_hash: Option<&str>) -> Result<ModelBundle<T>> {
    let bytes = std::fs::read(path)?;
    let (hbytes, payload) = unframe(MAGIC, &bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(hbytes)?;
    if header.arch.hash() != header.config_hash {
        return Err(Error::Checkpoint("stored config hash does not match stored architecture".into()));
    }
    if let Some(expected) = expected_hash {
        if expected != header.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash {} does not match expected {expected}",
                header.config_hash
            )));
        }
    }
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!("checkpoint dtype {} but {} requested", header.dtype, T::DTYPE)));
    }
    let mut offset = 0;
    let mut stores = BTreeMap::new();
    for g in &header.groups {
        stores.insert(g.group.clone(), read_group::<T>(g, payload, &mut offset)?);
    }
    if offset != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    let take = |name: &str| stores.get(name).ok_or_else(|| Error::Checkpoint(format!("missing group {name}")));

    let mut bundle = ModelBundle::<T>::new(header.arch.clone(), 0)?;
    bundle.mapping = match header.mapping_kind {
        MappingKind::Mlp => MappingNet::new(header.arch.latent_dim, &mut crate::seeding::rng(0, &[])),
        MappingKind::Identity => MappingNet::identity(),
    };
    if header.synthesis_kind == SynthesisKind::DebugEmbed {
        bundle.synthesis = SynthesisNet::debug_embed(&header.arch);
    }
    if header.encoder_kind == EncoderKind::DebugReadout {
        bundle.encoder = Encoder::debug_readout(&header.arch);
    }
    let load = |dst: &mut ParamStore<T>, name: &str| -> Result<()> {
        dst.load_from(take(name)?).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
    };
    load(&mut bundle.mapping.params, "mapping")?;
    load(&mut bundle.synthesis.params, "synthesis")?;
    load(&mut bundle.discriminator.params, "discriminator")?;
    load(&mut bundle.encoder.params, "encoder")?;
    bundle = bundle.with_feature_weights(take("features")?)?;
    bundle.encoder_trained = header.encoder_trained;
    bundle.mean_w = header.mean_w.map(|v| LatentW::new(v.into_iter().map(T::from_f64_lossy).collect()));
    bundle.seeds = header.seeds;
    Ok(bundle)
}

/// Writes a standalone parameter file (used for externally supplied feature weights).
pub fn write_param_file<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let header = serde_json::json!({ "dtype": T::DTYPE, "group": group_header("params", store) });
    let mut payload = Vec::new();
    write_store(store, &mut payload);
    write_atomic(path, &frame(PARAM_MAGIC, &serde_json::to_vec(&header)?, &payload))
}

pub fn read_param_file<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = std::fs::read(path)?;
    let (hbytes, payload) = unframe(PARAM_MAGIC, &bytes)?;
    #[derive(Deserialize)]
    struct Header {
        dtype: String,
        group: GroupHeader,
    }
    let header: Header = serde_json::from_slice(hbytes)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!("parameter file dtype {} but {} requested", header.dtype, T::DTYPE)));
    }
    let mut offset = 0;
    let store = read_group(&header.group, payload, &mut offset)?;
    if offset != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(store)
}

