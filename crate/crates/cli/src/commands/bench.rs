//! Throughput report: synthesis and inference rates and training wall-clock
//! per epoch on a fixed workload. Timings vary run to run; the generated
//! images do not, and the report says whether they matched across worker
//! counts.

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use noisomics_core::model::{pretrain, predict_strengths, train_scratch, EncoderCheckpoint, LabeledExample, PairSource, Schedule};
use noisomics_core::Primitive;
use rayon::prelude::*;

use super::ensure_dir;
use super::synthesize::generate;
use crate::config::{Config, OrderMode};
use crate::digest::sha256_hex;
use crate::report::{Provenance, Report, Row};
use crate::tensor_io;

pub const REPORT_STEM: &str = "bench";
pub const SYNTH_COUNT: usize = 100;
pub const SYNTH_SIZE: usize = 32;

fn rate(count: usize, secs: f64) -> f64 {
    count as f64 / secs.max(1e-9)
}

/// Synthesizes the benchmark set on `workers` threads, returning images per
/// second and a digest of every generated file's bytes.
fn synth_pass(cfg: &Config, workers: usize) -> Result<(f64, String)> {
    let start = Instant::now();
    let g = crate::with_workers(workers, || generate(cfg))??;
    let secs = start.elapsed().as_secs_f64();
    let mut bytes = Vec::new();
    for (_, x) in &g.cleans {
        bytes.extend(tensor_io::encode(x));
    }
    for (r, x) in &g.samples {
        bytes.extend(serde_json::to_vec(r)?);
        bytes.extend(tensor_io::encode(x));
    }
    Ok((rate(SYNTH_COUNT, secs), sha256_hex(&bytes)))
}

pub fn run(cfg: &Config, out: &Path) -> Result<Report> {
    ensure_dir(out)?;
    cfg.echo(out)?;
    let workers = if cfg.workers == 0 { rayon::current_num_threads() } else { cfg.workers };
    let mut rows = Vec::new();

    let mut synth_cfg = cfg.clone();
    synth_cfg.synthesize.count = SYNTH_COUNT;
    synth_cfg.synthesize.size = SYNTH_SIZE;
    synth_cfg.synthesize.source = "procedural".into();
    synth_cfg.synthesize.order_mode = OrderMode::Fixed;
    let (r1, d1) = synth_pass(&synth_cfg, 1)?;
    rows.push(Row::value("synthesis_images_per_s", "workers=1", r1, SYNTH_COUNT));
    let (rn, dn) = synth_pass(&synth_cfg, workers)?;
    rows.push(Row::value("synthesis_images_per_s", &format!("workers={}", workers), rn, SYNTH_COUNT));
    let mut scaling = Row::value("synthesis_speedup", &format!("workers=1->{}", workers), rn / r1, SYNTH_COUNT);
    if workers >= 4 && rn / r1 < 2.0 {
        log::warn!("synthesis sped up only {:.2}x from 1 to {} workers", rn / r1, workers);
        scaling = scaling.note("soft check: below 2x");
    }
    rows.push(scaling);
    rows.push(Row::value("identical_across_workers", "synthesis", f64::from(u8::from(d1 == dn)), SYNTH_COUNT).note(d1));

    // Training and inference at the model's own input size.
    let encoder = cfg.encoder()?;
    let mut train_cfg = synth_cfg.clone();
    train_cfg.synthesize.size = encoder.input_size;
    train_cfg.synthesize.channels = encoder.input_channels;
    let g = generate(&train_cfg)?;
    let labeled: Vec<LabeledExample> = g
        .samples
        .iter()
        .map(|(r, x)| {
            Ok(LabeledExample { image: x.clone(), target: r.strengths()?.expect("synthesized"), origin: None })
        })
        .collect::<Result<_>>()?;
    let schedule = Schedule { epochs: 1, ..cfg.train.schedule() };
    let stream = noisomics_core::RngStream::new(cfg.seed).derive("bench", 0);

    let start = Instant::now();
    let scratch = train_scratch(&encoder, &labeled, &[], &schedule, &stream)?;
    rows.push(Row::value("epoch_seconds", "scratch", start.elapsed().as_secs_f64(), labeled.len()));

    let cleans: Vec<_> = g.cleans.iter().map(|(_, x)| x.clone()).collect();
    let order = Primitive::ALL;
    let source = PairSource { cleans: &cleans, order: &order, engine: cfg.synthesize.engine()?, shared_realization: false };
    let start = Instant::now();
    pretrain(&EncoderCheckpoint::initialize(&encoder)?, &source, &schedule, &stream)?;
    rows.push(Row::value("epoch_seconds", "pretrain", start.elapsed().as_secs_f64(), cleans.len()));

    let ckpt = scratch.checkpoint;
    for w in [1, workers] {
        let start = Instant::now();
        crate::with_workers(w, || {
            labeled.par_iter().map(|e| predict_strengths(&ckpt, &e.image)).collect::<noisomics_core::Result<Vec<_>>>()
        })??;
        let r = rate(labeled.len(), start.elapsed().as_secs_f64());
        rows.push(Row::value("inference_images_per_s", &format!("workers={}", w), r, labeled.len()));
        if workers == 1 {
            break;
        }
    }

    let report = Report { provenance: Provenance { seed: cfg.seed, ..Provenance::default() }, rows };
    report.write(out, REPORT_STEM)?;
    Ok(report)
}
