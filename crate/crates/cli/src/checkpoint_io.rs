//! The NSMC checkpoint container.
//!
//! Layout, little-endian:
//!
//! * magic `NSMC`, version `u32` = 1
//! * config block: `u32` byte length, then compact JSON holding the encoder
//!   config, stage and training lineage
//! * two parameter blocks (`encoder`, then `head`), each: `u32` name length,
//!   name, `u64` value count, `f64` values, 32-byte SHA-256 of the value bytes
//!
//! Parameters are stored as `f64`, so round trips are bit-exact.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use noisomics_core::model::{
    Activation, EncoderCheckpoint, EncoderConfig, InputFilter, Stage, TrainingMode, TrainingRecord,
};
use serde::{Deserialize, Serialize};

use crate::digest::{sha256, sha256_hex};

pub const MAGIC: &[u8; 4] = b"NSMC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub conv_channels: [usize; 2],
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub head_hidden: usize,
    pub activation: String,
    pub input_filter: String,
    pub normalize: bool,
    pub init_seed: u64,
}

impl From<&EncoderConfig> for ModelConfig {
    fn from(c: &EncoderConfig) -> Self {
        Self {
            input_channels: c.input_channels,
            input_size: c.input_size,
            conv_channels: c.conv_channels,
            hidden_dim: c.hidden_dim,
            embed_dim: c.embed_dim,
            head_hidden: c.head_hidden,
            activation: c.activation.name().into(),
            input_filter: c.input_filter.name().into(),
            normalize: c.normalize,
            init_seed: c.init_seed,
        }
    }
}

impl ModelConfig {
    pub fn to_core(&self) -> Result<EncoderConfig> {
        let c = EncoderConfig {
            input_channels: self.input_channels,
            input_size: self.input_size,
            conv_channels: self.conv_channels,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            head_hidden: self.head_hidden,
            activation: self.activation.parse::<Activation>()?,
            input_filter: self.input_filter.parse::<InputFilter>()?,
            normalize: self.normalize,
            init_seed: self.init_seed,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistoryEntry {
    mode: String,
    stream: String,
    log_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    stage: String,
    history: Vec<HistoryEntry>,
}

fn put_block(out: &mut Vec<u8>, name: &str, values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    let start = out.len();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = sha256(&out[start..]);
    out.extend_from_slice(&digest);
}

pub fn encode(ckpt: &EncoderCheckpoint) -> Vec<u8> {
    let header = Header {
        config: ModelConfig::from(&ckpt.config),
        stage: ckpt.stage.name().into(),
        history: ckpt
            .history
            .iter()
            .map(|r| HistoryEntry {
                mode: r.mode.name().into(),
                stream: r.stream.clone(),
                log_digest: format!("{:016x}", r.log_digest),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    put_block(&mut out, "encoder", &ckpt.encoder);
    put_block(&mut out, "head", &ckpt.head);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            bail!(
                "truncated {} at byte {}: need {} bytes, {} left",
                what,
                self.pos,
                n,
                self.bytes.len() - self.pos
            );
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into()?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into()?))
    }

    fn block(&mut self, expected: &str) -> Result<Vec<f64>> {
        let at = self.pos;
        let len = self.u32("block name length")? as usize;
        let name = self.take(len, "block name")?;
        ensure!(
            name == expected.as_bytes(),
            "expected block `{}` at byte {}, found `{}`",
            expected,
            at,
            String::from_utf8_lossy(name)
        );
        let count = self.u64("value count")? as usize;
        let bytes = self.take(count.checked_mul(8).context("block too large")?, "parameter values")?;
        let digest = self.take(32, "block digest")?;
        ensure!(sha256(bytes) == digest, "digest mismatch in block `{}`", expected);
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<EncoderCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    ensure!(magic == MAGIC, "bad magic at byte 0: {:?}", String::from_utf8_lossy(magic));
    let version = r.u32("version")?;
    ensure!(version == VERSION, "unsupported checkpoint version {} at byte 4", version);
    let len = r.u32("config length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "config block")?).context("config block")?;
    let encoder = r.block("encoder")?;
    let head = r.block("head")?;
    ensure!(r.pos == bytes.len(), "{} trailing bytes at byte {}", bytes.len() - r.pos, r.pos);
    let history = header
        .history
        .iter()
        .map(|h| {
            Ok(TrainingRecord {
                mode: h.mode.parse::<TrainingMode>()?,
                stream: h.stream.clone(),
                log_digest: u64::from_str_radix(&h.log_digest, 16).context("log digest")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ckpt = EncoderCheckpoint {
        config: header.config.to_core()?,
        stage: header.stage.parse::<Stage>()?,
        encoder,
        head,
        history,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

pub fn save(path: &Path, ckpt: &EncoderCheckpoint) -> Result<String> {
    let bytes = encode(ckpt);
    fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// The checkpoint and the SHA-256 of its file bytes.
pub fn load(path: &Path) -> Result<(EncoderCheckpoint, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let ckpt = decode(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    Ok((ckpt, sha256_hex(&bytes)))
}

/// SHA-256 of the canonical encoding.
pub fn digest(ckpt: &EncoderCheckpoint) -> String {
    sha256_hex(&encode(ckpt))
}
