use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::config::EncoderConfig;
use super::network::{EncoderNet, HeadNet};
use crate::error::invalid;
use crate::rng::{fnv1a, RngStream};
use crate::{Error, Result};

/// Lifecycle stage of a checkpoint. Only `Finetuned` checkpoints predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Initialized,
    Pretrained,
    Finetuned,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Initialized => "initialized",
            Stage::Pretrained => "pretrained",
            Stage::Finetuned => "finetuned",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initialized" => Ok(Stage::Initialized),
            "pretrained" => Ok(Stage::Pretrained),
            "finetuned" => Ok(Stage::Finetuned),
            other => Err(invalid!("unknown stage `{}`", other)),
        }
    }
}

/// Training regime that produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    /// Contrastive only, encoder trained.
    Pretrain,
    /// Regression on a frozen encoder.
    Finetune,
    /// Regression end to end from random initialization.
    Scratch,
    /// Contrastive plus regression, end to end.
    Joint,
}

impl TrainingMode {
    pub const ALL: [TrainingMode; 4] = [
        TrainingMode::Pretrain,
        TrainingMode::Finetune,
        TrainingMode::Scratch,
        TrainingMode::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainingMode::Pretrain => "pretrain",
            TrainingMode::Finetune => "finetune",
            TrainingMode::Scratch => "scratch",
            TrainingMode::Joint => "joint",
        }
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainingMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid!("unknown training mode `{}`", s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
}

/// Per-epoch losses of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn push(&mut self, epoch: usize, split: Split, loss: f64) {
        self.entries.push(LogEntry { epoch, split, loss });
    }

    /// FNV-1a over the exact bits of every entry.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.entries.len() * 17);
        for e in &self.entries {
            bytes.extend_from_slice(&(e.epoch as u64).to_le_bytes());
            bytes.push(matches!(e.split, Split::Validation) as u8);
            bytes.extend_from_slice(&e.loss.to_bits().to_le_bytes());
        }
        fnv1a(&bytes)
    }

    pub fn last(&self, split: Split) -> Option<f64> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.split == split)
            .map(|e| e.loss)
    }
}

/// One training run in a checkpoint's lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub mode: TrainingMode,
    /// Text form of the run's [`RngStream`].
    pub stream: String,
    pub log_digest: u64,
}

/// Encoder and head parameters plus their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCheckpoint {
    pub config: EncoderConfig,
    pub stage: Stage,
    pub encoder: Vec<f64>,
    pub head: Vec<f64>,
    pub history: Vec<TrainingRecord>,
}

impl EncoderCheckpoint {
    /// Random initialization from `config.init_seed`.
    pub fn initialize(config: &EncoderConfig) -> Result<Self> {
        let enc = EncoderNet::new(config)?;
        let head = HeadNet::new(config);
        let root = RngStream::new(config.init_seed).derive("init", 0);
        Ok(Self {
            config: config.clone(),
            stage: Stage::Initialized,
            encoder: enc.init(&root),
            head: head.init(&root),
            history: Vec::new(),
        })
    }

    /// Checks parameter counts against the config.
    pub fn validate(&self) -> Result<()> {
        let enc = EncoderNet::new(&self.config)?;
        let head = HeadNet::new(&self.config);
        if self.encoder.len() != enc.n_params() || self.head.len() != head.n_params() {
            return Err(invalid!(
                "parameter counts {}/{} do not match config ({}/{})",
                self.encoder.len(),
                self.head.len(),
                enc.n_params(),
                head.n_params()
            ));
        }
        if self
            .encoder
            .iter()
            .chain(&self.head)
            .any(|v| !v.is_finite())
        {
            return Err(invalid!("checkpoint holds non-finite parameters"));
        }
        Ok(())
    }

    pub fn log_digest(&self) -> Option<u64> {
        self.history.last().map(|r| r.log_digest)
    }
}
