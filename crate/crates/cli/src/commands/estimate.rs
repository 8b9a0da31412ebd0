//! Windowed strength estimation.
//!
//! Each corrupted or external image gets `windows` crops whose top-left
//! corners are uniform over the valid positions, drawn from the stream
//! `seed/estimate:0/window:i` for the image's manifest index `i`. The head's
//! outputs are averaged per component; the spread is the population
//! standard deviation over windows. Images smaller than the window are
//! reflect-padded and read through a single window.

use std::path::{Path, PathBuf};

use anyhow::Result;
use noisomics_core::engine::NUM_COMPONENTS;
use noisomics_core::model::{predict_strengths, EncoderCheckpoint};
use noisomics_core::{ImageTensor, RngStream};
use rayon::prelude::*;

use super::{component_names, ensure_dir, invalid_arg, load_image};
use crate::checkpoint_io;
use crate::config::Config;
use crate::manifest::{Manifest, Role};
use crate::report::Provenance;

pub const PREDICTIONS_NAME: &str = "predictions.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub windows: usize,
    pub padded: bool,
    pub mean: [f64; NUM_COMPONENTS],
    pub std: [f64; NUM_COMPONENTS],
}

#[derive(Debug)]
pub struct EstimateOutput {
    pub predictions: Vec<Prediction>,
    pub path: PathBuf,
    pub provenance: Provenance,
}

/// Crops `windows` windows of side `size` from `image`.
pub fn window_crops(image: &ImageTensor, size: usize, windows: usize, stream: &RngStream) -> Result<(Vec<ImageTensor>, bool)> {
    let (_, h, w) = image.shape();
    if h < size || w < size {
        let padded = image.reflect_pad_to(size, size);
        let (_, ph, pw) = padded.shape();
        let crop = padded.crop((ph - size) / 2, (pw - size) / 2, size, size)?;
        return Ok((vec![crop], true));
    }
    let mut d = stream.draws();
    let crops = (0..windows)
        .map(|_| {
            let top = d.below((h - size + 1) as u64) as usize;
            let left = d.below((w - size + 1) as u64) as usize;
            image.crop(top, left, size, size)
        })
        .collect::<noisomics_core::Result<Vec<_>>>()?;
    Ok((crops, false))
}

/// Mean and population standard deviation of per-window predictions.
pub fn aggregate(per_window: &[[f64; NUM_COMPONENTS]]) -> ([f64; NUM_COMPONENTS], [f64; NUM_COMPONENTS]) {
    let n = per_window.len() as f64;
    let mut mean = [0.0; NUM_COMPONENTS];
    for p in per_window {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = [0.0; NUM_COMPONENTS];
    for p in per_window {
        for ((s, v), m) in std.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    (mean, std)
}

pub fn estimate_image(
    ckpt: &EncoderCheckpoint,
    id: &str,
    image: &ImageTensor,
    size: usize,
    windows: usize,
    stream: &RngStream,
) -> Result<Prediction> {
    let (crops, padded) = window_crops(image, size, windows, stream)?;
    if padded {
        log::warn!("`{}` is {:?}, smaller than the {}px window; using one padded window", id, image.shape(), size);
    }
    let per: Vec<[f64; NUM_COMPONENTS]> = crops
        .iter()
        .map(|c| predict_strengths(ckpt, c).map(|s| *s.as_array()))
        .collect::<noisomics_core::Result<_>>()?;
    let (mean, std) = aggregate(&per);
    Ok(Prediction { id: id.to_string(), windows: per.len(), padded, mean, std })
}

fn header() -> Vec<String> {
    let names = component_names();
    let mut h = vec!["id".to_string(), "windows".to_string(), "padded".to_string()];
    h.extend(names.iter().map(|n| format!("{}_mean", n)));
    h.extend(names.iter().map(|n| format!("{}_std", n)));
    h.extend(["checkpoint_sha256", "manifest_sha256", "seed"].map(String::from));
    h
}

pub fn write_predictions(path: &Path, preds: &[Prediction], prov: &Provenance) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header())?;
    for p in preds {
        let mut rec = vec![p.id.clone(), p.windows.to_string(), p.padded.to_string()];
        rec.extend(p.mean.iter().chain(&p.std).map(|v| v.to_string()));
        rec.extend([prov.checkpoint_sha256.clone(), prov.manifest_sha256.clone(), prov.seed.to_string()]);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<(Vec<Prediction>, Option<Provenance>)> {
    let mut r = csv::Reader::from_path(path)?;
    let expected = header();
    let got: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if got != expected {
        return Err(invalid_arg!("{} does not have the predictions header", path.display()));
    }
    let mut preds = Vec::new();
    let mut prov = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| invalid_arg!("predictions row {}: column {}: {}", line + 2, expected[i], e))
        };
        let mut mean = [0.0; NUM_COMPONENTS];
        let mut std = [0.0; NUM_COMPONENTS];
        for c in 0..NUM_COMPONENTS {
            mean[c] = num(3 + c)?;
            std[c] = num(3 + NUM_COMPONENTS + c)?;
        }
        let base = 3 + 2 * NUM_COMPONENTS;
        prov.get_or_insert_with(|| Provenance {
            checkpoint_sha256: rec[base].to_string(),
            manifest_sha256: rec[base + 1].to_string(),
            seed: rec[base + 2].parse().unwrap_or_default(),
        });
        preds.push(Prediction {
            id: rec[0].to_string(),
            windows: rec[1].parse()?,
            padded: rec[2].parse()?,
            mean,
            std,
        });
    }
    Ok((preds, prov))
}

pub fn run(cfg: &Config, manifest_path: &Path, checkpoint: &Path, out: &Path) -> Result<EstimateOutput> {
    if !checkpoint.is_file() {
        return Err(invalid_arg!("checkpoint {} does not exist", checkpoint.display()));
    }
    ensure_dir(out)?;
    cfg.echo(out)?;
    let (ckpt, sha) = checkpoint_io::load(checkpoint)?;
    let manifest = Manifest::load(manifest_path)?;
    let size = match cfg.estimate.window_size {
        0 => ckpt.config.input_size,
        s => s,
    };
    if size != ckpt.config.input_size {
        return Err(invalid_arg!(
            "window size {} differs from the model input size {}",
            size,
            ckpt.config.input_size
        ));
    }
    if cfg.estimate.windows == 0 {
        return Err(invalid_arg!("estimate.windows must be at least 1"));
    }
    let root = RngStream::new(cfg.seed).derive("estimate", 0);
    let targets: Vec<(usize, &crate::manifest::Record)> = manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r.role, Role::Corrupted | Role::External))
        .collect();
    let predictions = crate::with_workers(cfg.workers, || {
        targets
            .par_iter()
            .map(|&(i, r)| {
                let image = load_image(&manifest, r)?;
                estimate_image(&ckpt, &r.id, &image, size, cfg.estimate.windows, &root.derive("window", i as u64))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let provenance = Provenance { checkpoint_sha256: sha, manifest_sha256: manifest.digest(), seed: cfg.seed };
    let path = out.join(PREDICTIONS_NAME);
    write_predictions(&path, &predictions, &provenance)?;
    Ok(EstimateOutput { predictions, path, provenance })
}
