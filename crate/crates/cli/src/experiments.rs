//! Toy-scale training experiments comparing contrastive pretraining with
//! end-to-end alternatives.
//!
//! Per seed, one encoder is pretrained on an unlabeled pool of clean
//! textures. Labeled sets are nested prefixes of one labeled stream, and
//! every run is scored on the same held-out set:
//!
//! * data scale: frozen-encoder head vs end-to-end scratch at each size, same
//!   head schedule;
//! * ordering: finetuned vs joint vs scratch at one size;
//! * feature space: MMD² between embeddings of one dominant-noise class over
//!   two disjoint texture families, pretrained vs scratch encoder.

use anyhow::Result;
use noisomics_core::analysis::{mmd_rbf, Bandwidth};
use noisomics_core::engine::{compose_image, sample_strengths, synthesize, EngineConfig, NoiseStrengths};
use noisomics_core::model::{
    encode, finetune, pretrain, train_joint, train_scratch, Activation, EncoderCheckpoint, EncoderConfig,
    LabeledExample, Origin, PairSource, Schedule, Split, TrainOutcome,
};
use noisomics_core::procedural::{kind_for, texture, TextureKind, FAMILY_GEOMETRIC, FAMILY_ORGANIC};
use noisomics_core::{ImageTensor, Primitive, RngStream};
use rayon::prelude::*;

use crate::report::{Provenance, Report, Row};

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub encoder: EncoderConfig,
    pub pool_size: usize,
    pub sizes: Vec<usize>,
    pub heldout_size: usize,
    pub pretrain: Schedule,
    /// Shared by the frozen-encoder head, scratch and joint runs.
    pub head: Schedule,
    pub joint_size: usize,
    pub joint_weight: f64,
    /// Images per texture family and noise class in the MMD comparison.
    pub mmd_per_class: usize,
    pub engine: EngineConfig,
    pub shared_realization: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig { input_size: 16, activation: Activation::Relu, ..EncoderConfig::default() },
            pool_size: 1024,
            sizes: vec![64, 256, 1024],
            heldout_size: 256,
            pretrain: Schedule {
                epochs: 10,
                batch_size: 16,
                learning_rate: 0.005,
                momentum: 0.9,
                temperature: 0.1,
                clip_norm: 0.0,
            },
            head: Schedule {
                epochs: 15,
                batch_size: 16,
                learning_rate: 0.1,
                momentum: 0.9,
                temperature: 0.1,
                // Keeps the joint contrastive term from blowing up the encoder.
                clip_norm: 1.0,
            },
            joint_size: 256,
            joint_weight: 1.0,
            mmd_per_class: 200,
            engine: EngineConfig::default(),
            shared_realization: false,
        }
    }
}

impl Protocol {
    /// A few-second version for determinism checks.
    pub fn quick() -> Self {
        let p = Self::default();
        Self {
            encoder: EncoderConfig { conv_channels: [4, 8], hidden_dim: 16, embed_dim: 16, head_hidden: 8, ..p.encoder },
            pool_size: 48,
            sizes: vec![16, 32],
            heldout_size: 16,
            pretrain: Schedule { epochs: 2, ..p.pretrain },
            head: Schedule { epochs: 3, ..p.head },
            joint_size: 16,
            mmd_per_class: 6,
            ..p
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalePoint {
    pub size: usize,
    pub finetuned: f64,
    pub scratch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ordering {
    pub size: usize,
    pub finetuned: f64,
    pub joint: f64,
    pub scratch: f64,
}

impl Ordering {
    pub fn holds(&self) -> bool {
        self.finetuned <= self.joint && self.joint <= self.scratch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyMmd {
    /// Mean over the five noise classes.
    pub pretrained: f64,
    pub scratch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub pretrain_val_loss: f64,
    pub scale: Vec<ScalePoint>,
    pub ordering: Ordering,
    pub mmd: FamilyMmd,
}

fn cleans(p: &Protocol, root: &RngStream, label: &str, n: usize, kinds: &[TextureKind]) -> Vec<ImageTensor> {
    let c = p.encoder.input_channels;
    let s = p.encoder.input_size;
    (0..n).map(|i| texture(kind_for(kinds, i), c, s, s, &root.derive(label, i as u64))).collect()
}

fn labeled(p: &Protocol, cleans: &[ImageTensor], stream: &RngStream) -> Result<Vec<LabeledExample>> {
    cleans
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let s = stream.derive("sample", i as u64);
            let ns = synthesize("", c, &Primitive::ALL, &s, &p.engine)?;
            Ok(LabeledExample { image: ns.corrupted, target: ns.strengths, origin: Some(Origin { clean: i, stream: s }) })
        })
        .collect()
}

fn final_val(o: &TrainOutcome) -> f64 {
    o.log.last(Split::Validation).expect("validation set is non-empty")
}

/// `m` samples whose strengths have `class` as their argmax, from `stream`.
fn class_genes(class: Primitive, m: usize, stream: &RngStream) -> Vec<(NoiseStrengths, RngStream)> {
    let mut out = Vec::with_capacity(m);
    let mut t = 0u64;
    while out.len() < m {
        let s = stream.derive("try", t);
        t += 1;
        let strengths = sample_strengths(&s.derive("strengths", 0));
        if strengths.dominant() == class {
            out.push((strengths, s));
        }
    }
    out
}

fn family_embeddings(
    p: &Protocol,
    encoders: &[&EncoderCheckpoint],
    family: &[TextureKind],
    class: Primitive,
    root: &RngStream,
    label: &str,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let base = cleans(p, root, &format!("{}_clean", label), p.mmd_per_class, family);
    let genes = class_genes(class, p.mmd_per_class, &root.derive(&format!("{}_noise", label), class.index() as u64));
    let images: Vec<ImageTensor> = base
        .iter()
        .zip(&genes)
        .map(|(c, (st, s))| compose_image(c, st, &Primitive::ALL, s, &p.engine))
        .collect::<noisomics_core::Result<_>>()?;
    encoders
        .iter()
        .map(|e| images.iter().map(|x| encode(e, x).map_err(Into::into)).collect())
        .collect()
}

/// Mean over noise classes of MMD² between the two texture families, for each encoder.
pub fn family_mmd(p: &Protocol, encoders: &[&EncoderCheckpoint], root: &RngStream) -> Result<Vec<f64>> {
    let classes = &Primitive::ALL[..5];
    let mut totals = vec![0.0; encoders.len()];
    for &class in classes {
        let a = family_embeddings(p, encoders, &FAMILY_GEOMETRIC, class, root, "family_a")?;
        let b = family_embeddings(p, encoders, &FAMILY_ORGANIC, class, root, "family_b")?;
        for (t, (ea, eb)) in totals.iter_mut().zip(a.iter().zip(&b)) {
            *t += mmd_rbf(ea, eb, Bandwidth::Median)?;
        }
    }
    Ok(totals.into_iter().map(|t| t / classes.len() as f64).collect())
}

pub fn run_seed(p: &Protocol, seed: u64) -> Result<SeedOutcome> {
    let root = RngStream::new(seed);
    let cfg = p.encoder.clone().with_seed(seed);
    let pool = cleans(p, &root, "pool", p.pool_size, &[TextureKind::Mixed]);
    let max_n = p.sizes.iter().copied().max().unwrap_or(0).max(p.joint_size);
    let label_cleans = cleans(p, &root, "labeled", max_n, &[TextureKind::Mixed]);
    let train = labeled(p, &label_cleans, &root.derive("labeled_noise", 0))?;
    let heldout_cleans = cleans(p, &root, "heldout", p.heldout_size, &[TextureKind::Mixed]);
    let heldout = labeled(p, &heldout_cleans, &root.derive("heldout_noise", 0))?;
    let order = Primitive::ALL;

    let source = PairSource { cleans: &pool, order: &order, engine: p.engine, shared_realization: p.shared_realization };
    let pre = pretrain(&EncoderCheckpoint::initialize(&cfg)?, &source, &p.pretrain, &root.derive("pretrain", 0))?;

    let mut scale = Vec::new();
    let mut at_joint = None;
    let mut largest_scratch = None;
    for &n in &p.sizes {
        let ft = finetune(&pre.checkpoint, &train[..n], &heldout, &p.head, &root.derive("finetune", n as u64))?;
        let sc = train_scratch(&cfg, &train[..n], &heldout, &p.head, &root.derive("scratch", n as u64))?;
        scale.push(ScalePoint { size: n, finetuned: final_val(&ft), scratch: final_val(&sc) });
        if n == p.joint_size {
            at_joint = Some((final_val(&ft), final_val(&sc)));
        }
        largest_scratch = Some(sc.checkpoint);
    }
    let (ft_j, sc_j) = match at_joint {
        Some(v) => v,
        None => {
            let n = p.joint_size;
            let ft = finetune(&pre.checkpoint, &train[..n], &heldout, &p.head, &root.derive("finetune", n as u64))?;
            let sc = train_scratch(&cfg, &train[..n], &heldout, &p.head, &root.derive("scratch", n as u64))?;
            (final_val(&ft), final_val(&sc))
        }
    };
    let joint_source = PairSource {
        cleans: &label_cleans[..p.joint_size],
        order: &order,
        engine: p.engine,
        shared_realization: p.shared_realization,
    };
    let joint = train_joint(
        &cfg,
        &joint_source,
        &train[..p.joint_size],
        &heldout,
        &p.head,
        &root.derive("joint", p.joint_size as u64),
        p.joint_weight,
    )?;
    let ordering = Ordering { size: p.joint_size, finetuned: ft_j, joint: final_val(&joint), scratch: sc_j };

    let scratch_ckpt = largest_scratch.expect("at least one size");
    let mmd = family_mmd(p, &[&pre.checkpoint, &scratch_ckpt], &root.derive("mmd", 0))?;
    Ok(SeedOutcome {
        seed,
        pretrain_val_loss: pre.log.last(Split::Validation).unwrap_or(f64::NAN),
        scale,
        ordering,
        mmd: FamilyMmd { pretrained: mmd[0], scratch: mmd[1] },
    })
}

/// Runs every seed on `workers` threads; results are in seed order.
pub fn run_seeds(p: &Protocol, seeds: &[u64], workers: usize) -> Result<Vec<SeedOutcome>> {
    crate::with_workers(workers, || seeds.par_iter().map(|&s| run_seed(p, s)).collect::<Result<Vec<_>>>())?
}

/// Flat report of per-seed outcomes and per-criterion win counts.
pub fn report(outcomes: &[SeedOutcome]) -> Report {
    let mut rows = Vec::new();
    for o in outcomes {
        let seed = format!("seed={}", o.seed);
        rows.push(Row::value("pretrain_val_loss", &seed, o.pretrain_val_loss, 1));
        for s in &o.scale {
            let subset = format!("{}:n={}", seed, s.size);
            rows.push(Row::value("heldout_mse_finetuned", &subset, s.finetuned, s.size));
            rows.push(Row::value("heldout_mse_scratch", &subset, s.scratch, s.size));
        }
        let subset = format!("{}:n={}", seed, o.ordering.size);
        rows.push(Row::value("val_mse_joint", &subset, o.ordering.joint, o.ordering.size));
        rows.push(Row::value("family_mmd2_pretrained", &seed, o.mmd.pretrained, 1));
        rows.push(Row::value("family_mmd2_scratch", &seed, o.mmd.scratch, 1));
    }
    let n = outcomes.len();
    if let Some(first) = outcomes.first() {
        for (k, s) in first.scale.iter().enumerate() {
            let wins = outcomes.iter().filter(|o| o.scale[k].finetuned < o.scale[k].scratch).count();
            rows.push(Row::value("finetuned_beats_scratch", &format!("n={}", s.size), wins as f64, n));
        }
    }
    let ordered = outcomes.iter().filter(|o| o.ordering.holds()).count();
    rows.push(Row::value("ordering_holds", "finetuned<=joint<=scratch", ordered as f64, n));
    let closer = outcomes.iter().filter(|o| o.mmd.pretrained < o.mmd.scratch).count();
    rows.push(Row::value("pretrained_mmd_smaller", "all", closer as f64, n));
    Report { provenance: Provenance { seed: outcomes.first().map_or(0, |o| o.seed), ..Provenance::default() }, rows }
}
