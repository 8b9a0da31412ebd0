//! Training orchestration over a manifest.
//!
//! * `pretrain`: contrastive, on the manifest's clean records.
//! * `finetune`: head only, on labeled corrupted records, from `--init`.
//! * `scratch`: end to end on labeled records.
//! * `joint`: end to end, contrastive plus regression; needs every labeled
//!   record's clean source, stream and a stage order shared by all records.
//!
//! Labeled records keep manifest order; the trailing `val_fraction` of them
//! is held out for validation. Outputs: `checkpoint.nsmc` and
//! `train_log.csv` (`epoch,train_loss,val_loss`).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use noisomics_core::model::{
    finetune, pretrain, train_joint, train_scratch, EncoderCheckpoint, LabeledExample, Origin,
    PairSource, Split, TrainLog, TrainingMode,
};
use noisomics_core::{ImageTensor, RngStream};
use serde::{Deserialize, Serialize};

use super::{ensure_dir, invalid_arg, load_image};
use crate::checkpoint_io;
use crate::config::Config;
use crate::manifest::{Manifest, Role};

pub const CHECKPOINT_NAME: &str = "checkpoint.nsmc";
pub const LOG_NAME: &str = "train_log.csv";

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: EncoderCheckpoint,
    pub checkpoint_path: PathBuf,
    pub sha256: String,
    pub log: TrainLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub fn log_rows(log: &TrainLog) -> Vec<LogRow> {
    let mut rows: Vec<LogRow> = Vec::new();
    for e in &log.entries {
        if rows.last().map_or(true, |r| r.epoch != e.epoch) {
            rows.push(LogRow { epoch: e.epoch, train_loss: f64::NAN, val_loss: None });
        }
        let row = rows.last_mut().expect("pushed above");
        match e.split {
            Split::Train => row.train_loss = e.loss,
            Split::Validation => row.val_loss = Some(e.loss),
        }
    }
    rows
}

pub fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let rows = log_rows(log);
    if rows.is_empty() {
        w.write_record(["epoch", "train_loss", "val_loss"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// `baseline − candidate` on the final validation loss of two logs, so a
/// positive gap means the candidate ended lower.
pub fn final_gap(baseline: &[LogRow], candidate: &[LogRow]) -> Option<f64> {
    let last = |rows: &[LogRow]| rows.iter().rev().find_map(|r| r.val_loss);
    Some(last(baseline)? - last(candidate)?)
}

struct Labeled {
    train: Vec<LabeledExample>,
    validation: Vec<LabeledExample>,
}

fn clean_pool(manifest: &Manifest) -> Result<(Vec<ImageTensor>, HashMap<String, usize>)> {
    let mut cleans = Vec::new();
    let mut index = HashMap::new();
    for r in manifest.by_role(Role::Clean) {
        index.insert(r.id.clone(), cleans.len());
        cleans.push(load_image(manifest, r)?);
    }
    Ok((cleans, index))
}

fn labeled(manifest: &Manifest, cfg: &Config, clean_index: Option<&HashMap<String, usize>>) -> Result<Labeled> {
    let frac = cfg.train.val_fraction;
    if !(0.0..1.0).contains(&frac) {
        return Err(invalid_arg!("train.val_fraction must lie in [0, 1), got {}", frac));
    }
    let mut all = Vec::new();
    for r in manifest.by_role(Role::Corrupted) {
        let Some(target) = r.strengths()? else { continue };
        let origin = match clean_index {
            None => None,
            Some(index) => {
                let cid = r.clean_id.as_deref().unwrap_or_default();
                let clean = *index
                    .get(cid)
                    .ok_or_else(|| invalid_arg!("record `{}`: joint training needs clean source `{}` in the manifest", r.id, cid))?;
                let stream = r
                    .stream()?
                    .ok_or_else(|| invalid_arg!("record `{}`: joint training needs a seed_path", r.id))?;
                Some(Origin { clean, stream })
            }
        };
        all.push(LabeledExample { image: load_image(manifest, r)?, target, origin });
    }
    if all.is_empty() {
        return Err(invalid_arg!("manifest has no corrupted records with strengths to train on"));
    }
    let n_val = (all.len() as f64 * frac) as usize;
    let validation = all.split_off(all.len() - n_val);
    Ok(Labeled { train: all, validation })
}

fn check_shared_order(manifest: &Manifest, cfg: &Config) -> Result<()> {
    let order = cfg.synthesize.order()?;
    for r in manifest.by_role(Role::Corrupted) {
        if let Some(o) = r.order()? {
            if o != order {
                return Err(invalid_arg!(
                    "record `{}`: joint training needs every record to use synthesize.stage_order",
                    r.id
                ));
            }
        }
    }
    Ok(())
}

pub fn run(cfg: &Config, manifest_path: &Path, mode: TrainingMode, init: Option<&Path>, out: &Path) -> Result<TrainOutput> {
    ensure_dir(out)?;
    cfg.echo(out)?;
    let manifest = Manifest::load(manifest_path)?;
    let schedule = cfg.train.schedule();
    let stream = RngStream::new(cfg.seed).derive(mode.name(), 0);
    let load_init = |required: bool| -> Result<Option<EncoderCheckpoint>> {
        match init {
            Some(p) if p.exists() => Ok(Some(checkpoint_io::load(p)?.0)),
            Some(p) => Err(invalid_arg!("checkpoint {} does not exist", p.display())),
            None if required => Err(invalid_arg!("{} needs --init <checkpoint>", mode)),
            None => Ok(None),
        }
    };
    let outcome = match mode {
        TrainingMode::Pretrain => {
            let (cleans, _) = clean_pool(&manifest)?;
            if cleans.len() < 2 {
                return Err(invalid_arg!("pretraining needs at least two clean records, found {}", cleans.len()));
            }
            let order = cfg.synthesize.order()?;
            let source = PairSource {
                cleans: &cleans,
                order: &order,
                engine: cfg.synthesize.engine()?,
                shared_realization: cfg.train.shared_realization,
            };
            let start = match load_init(false)? {
                Some(c) => c,
                None => EncoderCheckpoint::initialize(&cfg.encoder()?)?,
            };
            pretrain(&start, &source, &schedule, &stream)?
        }
        TrainingMode::Finetune => {
            let start = load_init(true)?.expect("required");
            let data = labeled(&manifest, cfg, None)?;
            finetune(&start, &data.train, &data.validation, &schedule, &stream)?
        }
        TrainingMode::Scratch => {
            let data = labeled(&manifest, cfg, None)?;
            train_scratch(&cfg.encoder()?, &data.train, &data.validation, &schedule, &stream)?
        }
        TrainingMode::Joint => {
            check_shared_order(&manifest, cfg)?;
            let (cleans, index) = clean_pool(&manifest)?;
            if cleans.len() < 2 {
                return Err(invalid_arg!("joint training needs at least two clean records, found {}", cleans.len()));
            }
            let data = labeled(&manifest, cfg, Some(&index))?;
            let order = cfg.synthesize.order()?;
            let source = PairSource {
                cleans: &cleans,
                order: &order,
                engine: cfg.synthesize.engine()?,
                shared_realization: cfg.train.shared_realization,
            };
            train_joint(
                &cfg.encoder()?,
                &source,
                &data.train,
                &data.validation,
                &schedule,
                &stream,
                cfg.train.joint_weight,
            )?
        }
    };
    let checkpoint_path = out.join(CHECKPOINT_NAME);
    let sha256 = checkpoint_io::save(&checkpoint_path, &outcome.checkpoint)?;
    write_log(&out.join(LOG_NAME), &outcome.log)?;
    fs::write(out.join("checkpoint.sha256"), format!("{}\n", sha256))?;
    Ok(TrainOutput { checkpoint: outcome.checkpoint, checkpoint_path, sha256, log: outcome.log })
}
