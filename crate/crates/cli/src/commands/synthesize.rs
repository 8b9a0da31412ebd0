//! Corrupted training sets from procedural textures or a directory of clean
//! images.
//!
//! Output layout: `clean/<id>.nsmt`, `corrupted/<id>.nsmt`, `manifest.jsonl`.
//! Clean image `i` of a procedural source comes from stream
//! `seed/clean:i` and sample `i` from `seed/sample:i`, so every file is a
//! function of the seed and its index alone, whatever the worker count.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use noisomics_core::engine::synthesize as synthesize_sample;
use noisomics_core::procedural::{kind_for, texture};
use noisomics_core::{ImageTensor, Primitive, RngStream};
use rayon::prelude::*;

use super::ensure_dir;
use crate::config::{Config, OrderMode};
use crate::manifest::{Manifest, Metadata, Record, Role};
use crate::tensor_io::{self, to_f32_precision};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug)]
pub struct SynthOutput {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Source files that could not be read, with the reason.
    pub errors: Vec<String>,
}

/// A clean source image and the corrupted samples it produced, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub cleans: Vec<(String, ImageTensor)>,
    pub samples: Vec<(Record, ImageTensor)>,
    pub errors: Vec<String>,
}

const SOURCE_EXTENSIONS: [&str; 5] = ["nsmt", "png", "pgm", "pnm", "ppm"];

fn source_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| SOURCE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn clean_id(i: usize) -> String {
    format!("c{:05}", i)
}

fn sample_id(i: usize) -> String {
    format!("s{:05}", i)
}

fn load_cleans(cfg: &Config, root: &RngStream) -> Result<(Vec<(String, ImageTensor)>, Vec<String>)> {
    let s = &cfg.synthesize;
    if s.source == "procedural" {
        let kinds = s.texture_kinds()?;
        let cleans = (0..s.count)
            .into_par_iter()
            .map(|i| {
                let x = texture(kind_for(&kinds, i), s.channels, s.size, s.size, &root.derive("clean", i as u64));
                (clean_id(i), to_f32_precision(&x))
            })
            .collect();
        return Ok((cleans, Vec::new()));
    }
    let dir = Path::new(&s.source);
    if !dir.is_dir() {
        bail!("clean source `{}` is neither `procedural` nor a directory", s.source);
    }
    let mut cleans = Vec::new();
    let mut errors = Vec::new();
    for path in source_files(dir)? {
        match tensor_io::read_image(&path) {
            Ok(x) => cleans.push((clean_id(cleans.len()), to_f32_precision(&x))),
            Err(e) => errors.push(format!("{}: {}", path.display(), e)),
        }
    }
    Ok((cleans, errors))
}

/// Stage order of sample `stream` under the configured order mode.
pub fn sample_order(cfg: &Config, stream: &RngStream) -> Result<Vec<Primitive>> {
    match cfg.synthesize.order_mode {
        OrderMode::Fixed => cfg.synthesize.order(),
        OrderMode::Random => {
            let mut order = Primitive::ALL.to_vec();
            stream.derive("order", 0).draws().shuffle(&mut order);
            Ok(order)
        }
    }
}

/// Everything `run` would write, without touching the disk. Uses the
/// current rayon pool.
pub fn generate(cfg: &Config) -> Result<Generated> {
    let root = RngStream::new(cfg.seed);
    let count = cfg.synthesize.count;
    if count == 0 {
        return Ok(Generated { cleans: Vec::new(), samples: Vec::new(), errors: Vec::new() });
    }
    let engine = cfg.synthesize.engine()?;
    let (cleans, errors) = load_cleans(cfg, &root)?;
    if cleans.is_empty() {
        bail!("no readable clean images in `{}`:\n  {}", cfg.synthesize.source, errors.join("\n  "));
    }
    let samples = (0..count)
        .into_par_iter()
        .map(|i| -> Result<(Record, ImageTensor)> {
            let (cid, clean) = &cleans[i % cleans.len()];
            let stream = root.derive("sample", i as u64);
            let order = sample_order(cfg, &stream)?;
            let ns = synthesize_sample(cid, clean, &order, &stream, &engine)?;
            let id = sample_id(i);
            let record = Record {
                path: format!("corrupted/{}.nsmt", id),
                id,
                role: Role::Corrupted,
                clean_id: Some(cid.clone()),
                strengths: Some(*ns.strengths.as_array()),
                seed_path: Some(stream.to_string()),
                order: Some(order.iter().map(|p| p.name().to_string()).collect()),
                metadata: Metadata::default(),
            };
            Ok((record, to_f32_precision(&ns.corrupted)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Generated { cleans, samples, errors })
}

pub fn run(cfg: &Config, out: &Path) -> Result<SynthOutput> {
    ensure_dir(out)?;
    cfg.echo(out)?;
    let g = crate::with_workers(cfg.workers, || generate(cfg))??;
    for e in &g.errors {
        log::warn!("skipped source {}", e);
    }
    let mut records = Vec::with_capacity(g.cleans.len() + g.samples.len());
    if !g.samples.is_empty() {
        ensure_dir(&out.join("clean"))?;
        ensure_dir(&out.join("corrupted"))?;
    }
    let written: Vec<Result<Record>> = crate::with_workers(cfg.workers, || {
        let cleans = g.cleans.par_iter().map(|(id, x)| {
            let path = format!("clean/{}.nsmt", id);
            tensor_io::write_tensor(&out.join(&path), x)?;
            Ok(Record {
                id: id.clone(),
                path,
                role: Role::Clean,
                clean_id: None,
                strengths: None,
                seed_path: None,
                order: None,
                metadata: Metadata::default(),
            })
        });
        let samples = g.samples.par_iter().map(|(r, x)| {
            tensor_io::write_tensor(&out.join(&r.path), x)?;
            Ok(r.clone())
        });
        cleans.chain(samples).collect()
    })?;
    for r in written {
        records.push(r?);
    }
    let manifest = Manifest::new(records, out);
    manifest.validate()?;
    let manifest_path = out.join(MANIFEST_NAME);
    manifest.save(&manifest_path)?;
    Ok(SynthOutput { manifest, manifest_path, errors: g.errors })
}
