//! Checkpoint file format.
//!
//! Little-endian:
//!
//! ```text
//! "ACFLCK01"  u32 version  u32 meta_len  meta (JSON, UTF-8)
//! u32 record_count
//! record*: u32 name_len  name  u32 rank  u32 dims[rank]  f32 payload
//! ```
//!
//! Record names are `model.*` (backbone and classifier), `head.<channel>.*`
//! (projections and β) and `optim.*` (momentum buffers).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::{OptimizerSettings, OptimizerState};
use crate::acfl::{Channel, MimicHead};
use crate::error::{Error, Result};
use crate::gcn::{BackboneConfig, ModelParams};
use crate::numerics::Tensor;
use crate::skeleton::{write_atomic, Form, SkeletonTopology, Standardizer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ACFLCK01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub channel: Channel,
    pub beta_enabled: bool,
    pub beta_updates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub form: Form,
    pub backbone: BackboneConfig,
    pub topology: SkeletonTopology,
    /// Input statistics fitted on the training split.
    pub standardizer: Standardizer,
    pub epoch: usize,
    pub seed: u64,
    pub optimizer: Option<OptimizerSettings>,
    pub heads: Vec<HeadMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
    pub heads: Vec<MimicHead>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn form(&self) -> Form {
        self.meta.form
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut records: Vec<(String, &Tensor)> = Vec::new();
        for (n, t) in self.params.iter() {
            records.push((format!("model.{n}"), t));
        }
        for h in &self.heads {
            let ch = h.channel.name();
            for (n, t) in h.projections() {
                records.push((format!("head.{ch}.{n}"), t));
            }
            records.push((format!("head.{ch}.beta"), &h.beta));
        }
        if let Some(o) = &self.optimizer {
            for (n, t) in o.buffers() {
                records.push((format!("optim.{n}"), t));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in &records {
            encode_record(&mut out, name, t);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format("magic", "not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let meta_len = r.u32("meta_len")? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "meta")?)
            .map_err(|e| Error::format("meta", e.to_string()))?;
        let count = r.u32("record_count")?;
        let mut model = BTreeMap::new();
        let mut head_parts: BTreeMap<(String, String), Tensor> = BTreeMap::new();
        let mut optim = BTreeMap::new();
        for _ in 0..count {
            let (name, t) = r.record()?;
            if let Some(n) = name.strip_prefix("model.") {
                model.insert(n.to_string(), t);
            } else if let Some(n) = name.strip_prefix("optim.") {
                optim.insert(n.to_string(), t);
            } else if let Some(rest) = name.strip_prefix("head.") {
                let (ch, part) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::format("record_name", name.clone()))?;
                head_parts.insert((ch.to_string(), part.to_string()), t);
            } else {
                return Err(Error::format("record_name", format!("unknown record {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format("trailer", format!("{} stray bytes", bytes.len() - r.pos)));
        }
        let params = ModelParams::from_map(model);
        params.check(&meta.backbone.with_form(meta.form))?;
        if meta.topology.points() != meta.backbone.points {
            return Err(Error::format("meta", "topology and backbone disagree on points"));
        }
        let mut heads = Vec::new();
        for hm in &meta.heads {
            let ch = hm.channel.name();
            let mut part = |p: &str| {
                head_parts
                    .remove(&(ch.to_string(), p.to_string()))
                    .ok_or_else(|| Error::format("head", format!("missing head.{ch}.{p}")))
            };
            heads.push(MimicHead {
                channel: hm.channel,
                w_q: part("w_q")?,
                w_k: part("w_k")?,
                w_v: part("w_v")?,
                beta: part("beta")?,
                beta_enabled: hm.beta_enabled,
                beta_updates: hm.beta_updates,
            });
        }
        if let Some(((ch, p), _)) = head_parts.into_iter().next() {
            return Err(Error::format("head", format!("unexpected record head.{ch}.{p}")));
        }
        let optimizer = match meta.optimizer {
            Some(s) => Some(OptimizerState::from_parts(s, optim)),
            None if optim.is_empty() => None,
            None => return Err(Error::format("optim", "buffers without optimizer settings")),
        };
        Ok(Self {
            meta,
            params,
            heads,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

fn encode_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(field, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn record(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32("name_len")? as usize;
        let name = String::from_utf8(self.take(len, "name")?.to_vec())
            .map_err(|_| Error::format("name", "not UTF-8"))?;
        let rank = self.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format("rank", format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format("dims", format!("{name}: {shape:?}")))?;
        let payload = self.take(
            n.checked_mul(4).ok_or_else(|| Error::format("payload", "overflow"))?,
            "payload",
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok((name, Tensor::new(&shape, data)?))
    }
}

/// SHA-256 over the f32 encoding of every parameter tensor, hex encoded.
pub fn params_hash(params: &ModelParams) -> String {
    let mut bytes = Vec::new();
    for (n, t) in params.iter() {
        encode_record(&mut bytes, n, t);
    }
    let digest = Sha256::digest(&bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}
