//! Training loops. Each run is single-threaded and a pure function of its
//! inputs and stream.

use alloc::vec;
use alloc::vec::Vec;

use super::checkpoint::{EncoderCheckpoint, Split, Stage, TrainLog, TrainingMode, TrainingRecord};
use super::config::EncoderConfig;
use super::loss::{info_nce_with_grad, mse_with_grad, ContrastiveEmbeddings};
use super::network::{EncoderNet, EncoderTrace, HeadNet};
use crate::engine::{
    compose_image, sample_strengths, EngineConfig, NoiseStrengths, Primitive, NUM_COMPONENTS,
};
use crate::error::invalid;
use crate::rng::RngStream;
use crate::tensor::ImageTensor;
use crate::Result;

/// Optimizer and batching settings shared by every mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// InfoNCE temperature.
    pub temperature: f64,
    /// Rescale each step's gradient to at most this L2 norm; zero disables.
    pub clip_norm: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            temperature: 0.1,
            clip_norm: 0.0,
        }
    }
}

impl Schedule {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid!("batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid!("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must lie in [0, 1)"));
        }
        if !(self.temperature > 0.0) {
            return Err(invalid!("temperature must be positive"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(invalid!("clip norm must be >= 0"));
        }
        Ok(())
    }
}

/// Where contrastive triplets come from.
#[derive(Debug, Clone, Copy)]
pub struct PairSource<'a> {
    pub cleans: &'a [ImageTensor],
    pub order: &'a [Primitive],
    pub engine: EngineConfig,
    /// Positives reuse the anchor's exact noise stream; otherwise they get
    /// fresh draws at the same strengths.
    pub shared_realization: bool,
}

/// Clean image index and sample stream a labeled image was composed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Origin {
    pub clean: usize,
    pub stream: RngStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: ImageTensor,
    pub target: NoiseStrengths,
    /// Needed by joint training to build positives and negatives.
    pub origin: Option<Origin>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: EncoderCheckpoint,
    pub log: TrainLog,
}

struct Sgd {
    velocity: Vec<f64>,
    lr: f64,
    momentum: f64,
    clip: f64,
}

impl Sgd {
    fn new(n: usize, s: &Schedule) -> Self {
        Self {
            velocity: vec![0.0; n],
            lr: s.learning_rate,
            momentum: s.momentum,
            clip: s.clip_norm,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let mut scale = 1.0;
        if self.clip > 0.0 {
            let norm = crate::math::sqrt(grad.iter().map(|g| g * g).sum());
            if norm > self.clip {
                scale = self.clip / norm;
            }
        }
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + scale * g;
            *p -= self.lr * *v;
        }
    }
}

/// One anchor with its positive and the negatives contrasted against it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveItem {
    pub anchor: ImageTensor,
    pub positive: ImageTensor,
    pub negatives: Vec<ImageTensor>,
}

/// Noise gene of one batch member: strengths plus the stream their
/// per-stage draws come from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gene {
    pub strengths: NoiseStrengths,
    pub stream: RngStream,
}

impl Gene {
    /// Strengths from the `strengths` child of `stream`, as in synthesis.
    pub fn draw(stream: &RngStream) -> Self {
        Self {
            strengths: sample_strengths(&stream.derive("strengths", 0)),
            stream: stream.clone(),
        }
    }
}

/// Anchor clean index, positive clean index and noise gene.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMember {
    pub anchor_clean: usize,
    pub positive_clean: usize,
    pub gene: Gene,
}

fn corrupt(source: &PairSource<'_>, clean: usize, gene: &Gene) -> Result<ImageTensor> {
    compose_image(
        &source.cleans[clean],
        &gene.strengths,
        source.order,
        &gene.stream,
        &source.engine,
    )
}

fn positive_for(source: &PairSource<'_>, m: &BatchMember) -> Result<ImageTensor> {
    if source.shared_realization {
        corrupt(source, m.positive_clean, &m.gene)
    } else {
        let fresh = Gene {
            strengths: m.gene.strengths,
            stream: m.gene.stream.derive("positive", 0),
        };
        corrupt(source, m.positive_clean, &fresh)
    }
}

/// Negatives for member `i`: its own clean image under every other
/// member's gene.
fn negatives_for(
    source: &PairSource<'_>,
    members: &[BatchMember],
    i: usize,
) -> Result<Vec<ImageTensor>> {
    members
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, other)| corrupt(source, members[i].anchor_clean, &other.gene))
        .collect()
}

/// Synthesizes every image of a contrastive batch.
///
/// The anchor is the anchor clean under the member's gene, the positive is
/// the positive clean under the same gene, and the negatives are the anchor
/// clean under the other members' genes.
pub fn make_contrastive_batch(
    source: &PairSource<'_>,
    members: &[BatchMember],
) -> Result<Vec<ContrastiveItem>> {
    for m in members {
        if m.anchor_clean >= source.cleans.len() || m.positive_clean >= source.cleans.len() {
            return Err(invalid!("batch member refers to a missing clean image"));
        }
    }
    (0..members.len())
        .map(|i| {
            Ok(ContrastiveItem {
                anchor: corrupt(source, members[i].anchor_clean, &members[i].gene)?,
                positive: positive_for(source, &members[i])?,
                negatives: negatives_for(source, members, i)?,
            })
        })
        .collect()
}

fn partner(stream: &RngStream, a: usize, n: usize) -> usize {
    let b = stream.draws().below(n as u64 - 1) as usize;
    if b >= a {
        b + 1
    } else {
        b
    }
}

/// Members for anchors `anchors`, with partners and genes drawn from `stream`.
fn draw_members(anchors: &[usize], n_cleans: usize, stream: &RngStream) -> Vec<BatchMember> {
    anchors
        .iter()
        .enumerate()
        .map(|(k, &a)| BatchMember {
            anchor_clean: a,
            positive_clean: partner(&stream.derive("partner", k as u64), a, n_cleans),
            gene: Gene::draw(&stream.derive("gene", k as u64)),
        })
        .collect()
}

struct Nets {
    enc: EncoderNet,
    head: HeadNet,
}

impl Nets {
    fn new(cfg: &EncoderConfig) -> Result<Self> {
        Ok(Self {
            enc: EncoderNet::new(cfg)?,
            head: HeadNet::new(cfg),
        })
    }
}

/// Loss and gradients of one batch.
///
/// Positives and per-anchor negatives switch on the contrastive term;
/// `targets` (one per anchor) switch on the regression term, scaled by
/// `weight`. Encoder gradients are only computed when `train_encoder` is set.
struct Objective<'a> {
    anchors: Vec<&'a ImageTensor>,
    others: Option<(Vec<&'a ImageTensor>, Vec<Vec<&'a ImageTensor>>, f64)>,
    targets: Option<(Vec<[f64; NUM_COMPONENTS]>, f64)>,
    train_encoder: bool,
}

struct Evaluated {
    loss: f64,
    grad_encoder: Vec<f64>,
    grad_head: Vec<f64>,
}

fn evaluate(nets: &Nets, enc_p: &[f64], head_p: &[f64], obj: &Objective<'_>) -> Result<Evaluated> {
    let forward = |imgs: &[&ImageTensor]| -> Result<Vec<EncoderTrace>> {
        imgs.iter().map(|x| nets.enc.forward(enc_p, x)).collect()
    };
    let ta = forward(&obj.anchors)?;
    let d = nets.enc.embed_dim();
    let mut g_anchor = vec![vec![0.0; d]; ta.len()];
    let mut ge = vec![0.0; nets.enc.n_params()];
    let mut gh = vec![0.0; nets.head.n_params()];
    let mut loss = 0.0;

    if let Some((pos, neg, tau)) = &obj.others {
        let tp = forward(pos)?;
        let tn: Vec<Vec<EncoderTrace>> =
            neg.iter().map(|set| forward(set)).collect::<Result<_>>()?;
        let ea: Vec<Vec<f64>> = ta.iter().map(|t| t.embedding.clone()).collect();
        let ep: Vec<Vec<f64>> = tp.iter().map(|t| t.embedding.clone()).collect();
        let en: Vec<Vec<Vec<f64>>> = tn
            .iter()
            .map(|set| set.iter().map(|t| t.embedding.clone()).collect())
            .collect();
        let (l, g) = info_nce_with_grad(
            &ContrastiveEmbeddings {
                anchors: &ea,
                positives: &ep,
                negatives: &en,
            },
            *tau,
        )?;
        loss += l;
        if obj.train_encoder {
            for (acc, gi) in g_anchor.iter_mut().zip(&g.anchors) {
                for (a, v) in acc.iter_mut().zip(gi) {
                    *a += v;
                }
            }
            for (t, gi) in tp.iter().zip(&g.positives) {
                nets.enc.backward(enc_p, t, gi, &mut ge);
            }
            for (set, gset) in tn.iter().zip(&g.negatives) {
                for (t, gi) in set.iter().zip(gset) {
                    nets.enc.backward(enc_p, t, gi, &mut ge);
                }
            }
        }
    }

    if let Some((targets, weight)) = &obj.targets {
        let heads: Vec<_> = ta
            .iter()
            .map(|t| nets.head.forward(head_p, &t.embedding))
            .collect();
        let preds: Vec<[f64; NUM_COMPONENTS]> = heads.iter().map(|h| h.output).collect();
        let (l, g) = mse_with_grad(&preds, targets)?;
        loss += weight * l;
        for ((h, gi), acc) in heads.iter().zip(&g).zip(g_anchor.iter_mut()) {
            let scaled = gi.map(|v| v * weight);
            let ge_emb = nets.head.backward(head_p, h, &scaled, &mut gh);
            if obj.train_encoder {
                for (a, v) in acc.iter_mut().zip(&ge_emb) {
                    *a += v;
                }
            }
        }
    }

    if obj.train_encoder {
        for (t, g) in ta.iter().zip(&g_anchor) {
            nets.enc.backward(enc_p, t, g, &mut ge);
        }
    }
    Ok(Evaluated {
        loss,
        grad_encoder: ge,
        grad_head: gh,
    })
}

fn check_pool(source: &PairSource<'_>, cfg: &EncoderConfig) -> Result<()> {
    if source.cleans.len() < 2 {
        return Err(invalid!(
            "contrastive training needs at least two clean images"
        ));
    }
    crate::engine::check_permutation(source.order)?;
    let net = EncoderNet::new(cfg)?;
    source.cleans.iter().try_for_each(|c| net.check_input(c))
}

fn check_labeled(set: &[LabeledExample], cfg: &EncoderConfig) -> Result<()> {
    let net = EncoderNet::new(cfg)?;
    set.iter().try_for_each(|e| net.check_input(&e.image))
}

fn contrastive_objective(
    items: &[ContrastiveItem],
    tau: f64,
    train_encoder: bool,
) -> Objective<'_> {
    Objective {
        anchors: items.iter().map(|t| &t.anchor).collect(),
        others: Some((
            items.iter().map(|t| &t.positive).collect(),
            items.iter().map(|t| t.negatives.iter().collect()).collect(),
            tau,
        )),
        targets: None,
        train_encoder,
    }
}

/// Contrastive loss on fixed batches over (at most) the first 128 cleans.
fn contrastive_validation(
    nets: &Nets,
    enc_p: &[f64],
    source: &PairSource<'_>,
    schedule: &Schedule,
    stream: &RngStream,
) -> Result<f64> {
    let n = source.cleans.len().min(128);
    let anchors: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for (bi, chunk) in anchors.chunks(schedule.batch_size).enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let members = draw_members(
            chunk,
            source.cleans.len(),
            &stream.derive("batch", bi as u64),
        );
        let items = make_contrastive_batch(source, &members)?;
        let obj = contrastive_objective(&items, schedule.temperature, false);
        total += evaluate(nets, enc_p, &[], &obj)?.loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// Contrastive pretraining of the encoder; the head is left untouched.
///
/// Each epoch visits every clean image once as an anchor, in a shuffled
/// order, with a freshly drawn noise gene and partner.
pub fn pretrain(
    init: &EncoderCheckpoint,
    source: &PairSource<'_>,
    schedule: &Schedule,
    stream: &RngStream,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    init.validate()?;
    if init.stage == Stage::Finetuned {
        return Err(invalid!("cannot pretrain a finetuned checkpoint"));
    }
    check_pool(source, &init.config)?;
    let nets = Nets::new(&init.config)?;
    let mut enc_p = init.encoder.clone();
    let mut opt = Sgd::new(enc_p.len(), schedule);
    let mut log = TrainLog::default();
    let n = source.cleans.len();
    let val_stream = stream.derive("validation", 0);
    for epoch in 0..schedule.epochs {
        let es = stream.derive("epoch", epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        es.derive("shuffle", 0).draws().shuffle(&mut order);
        let mut total = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(schedule.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let members = draw_members(chunk, n, &es.derive("batch", bi as u64));
            let items = make_contrastive_batch(source, &members)?;
            let ev = evaluate(
                &nets,
                &enc_p,
                &init.head,
                &contrastive_objective(&items, schedule.temperature, true),
            )?;
            opt.step(&mut enc_p, &ev.grad_encoder);
            total += ev.loss * chunk.len() as f64;
            count += chunk.len();
        }
        log.push(
            epoch,
            Split::Train,
            if count == 0 {
                0.0
            } else {
                total / count as f64
            },
        );
        let val = contrastive_validation(&nets, &enc_p, source, schedule, &val_stream)?;
        log.push(epoch, Split::Validation, val);
    }
    let mut history = init.history.clone();
    history.push(TrainingRecord {
        mode: TrainingMode::Pretrain,
        stream: alloc::format!("{}", stream),
        log_digest: log.digest(),
    });
    let checkpoint = EncoderCheckpoint {
        config: init.config.clone(),
        stage: Stage::Pretrained,
        encoder: enc_p,
        head: init.head.clone(),
        history,
    };
    checkpoint.validate()?;
    Ok(TrainOutcome { checkpoint, log })
}

fn targets_of(set: &[LabeledExample]) -> Vec<[f64; NUM_COMPONENTS]> {
    set.iter().map(|e| *e.target.as_array()).collect()
}

fn head_mse(
    nets: &Nets,
    head_p: &[f64],
    emb: &[Vec<f64>],
    targets: &[[f64; NUM_COMPONENTS]],
) -> Result<f64> {
    let preds: Vec<_> = emb
        .iter()
        .map(|e| nets.head.forward(head_p, e).output)
        .collect();
    mse_with_grad(&preds, targets).map(|(l, _)| l)
}

/// Trains the head on a frozen encoder with the regression loss.
pub fn finetune(
    pretrained: &EncoderCheckpoint,
    train: &[LabeledExample],
    validation: &[LabeledExample],
    schedule: &Schedule,
    stream: &RngStream,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    pretrained.validate()?;
    if pretrained.stage == Stage::Finetuned {
        return Err(invalid!("checkpoint is already finetuned"));
    }
    if train.is_empty() {
        return Err(invalid!("finetuning needs at least one labeled example"));
    }
    check_labeled(train, &pretrained.config)?;
    check_labeled(validation, &pretrained.config)?;
    let nets = Nets::new(&pretrained.config)?;
    let enc_p = &pretrained.encoder;
    let embed = |set: &[LabeledExample]| -> Result<Vec<Vec<f64>>> {
        set.iter()
            .map(|e| nets.enc.forward(enc_p, &e.image).map(|t| t.embedding))
            .collect()
    };
    let train_emb = embed(train)?;
    let val_emb = embed(validation)?;
    let train_t = targets_of(train);
    let val_t = targets_of(validation);
    let mut head_p = pretrained.head.clone();
    let mut opt = Sgd::new(head_p.len(), schedule);
    let mut log = TrainLog::default();
    for epoch in 0..schedule.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        stream
            .derive("shuffle", epoch as u64)
            .draws()
            .shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let mut grad = vec![0.0; head_p.len()];
            let traces: Vec<_> = chunk
                .iter()
                .map(|&i| nets.head.forward(&head_p, &train_emb[i]))
                .collect();
            let preds: Vec<_> = traces.iter().map(|t| t.output).collect();
            let tg: Vec<_> = chunk.iter().map(|&i| train_t[i]).collect();
            let (l, g) = mse_with_grad(&preds, &tg)?;
            for (t, gi) in traces.iter().zip(&g) {
                nets.head.backward(&head_p, t, gi, &mut grad);
            }
            opt.step(&mut head_p, &grad);
            total += l * chunk.len() as f64;
        }
        log.push(epoch, Split::Train, total / train.len() as f64);
        if !validation.is_empty() {
            log.push(
                epoch,
                Split::Validation,
                head_mse(&nets, &head_p, &val_emb, &val_t)?,
            );
        }
    }
    let mut history = pretrained.history.clone();
    history.push(TrainingRecord {
        mode: TrainingMode::Finetune,
        stream: alloc::format!("{}", stream),
        log_digest: log.digest(),
    });
    let checkpoint = EncoderCheckpoint {
        config: pretrained.config.clone(),
        stage: Stage::Finetuned,
        encoder: pretrained.encoder.clone(),
        head: head_p,
        history,
    };
    checkpoint.validate()?;
    Ok(TrainOutcome { checkpoint, log })
}

fn regression_validation(
    nets: &Nets,
    enc_p: &[f64],
    head_p: &[f64],
    validation: &[LabeledExample],
) -> Result<f64> {
    let emb: Vec<Vec<f64>> = validation
        .iter()
        .map(|e| nets.enc.forward(enc_p, &e.image).map(|t| t.embedding))
        .collect::<Result<_>>()?;
    head_mse(nets, head_p, &emb, &targets_of(validation))
}

/// Shared loop for the end-to-end modes.
fn end_to_end(
    config: &EncoderConfig,
    source: Option<&PairSource<'_>>,
    train: &[LabeledExample],
    validation: &[LabeledExample],
    schedule: &Schedule,
    stream: &RngStream,
    weight: f64,
    mode: TrainingMode,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(invalid!("training needs at least one labeled example"));
    }
    check_labeled(train, config)?;
    check_labeled(validation, config)?;
    let init = EncoderCheckpoint::initialize(config)?;
    let nets = Nets::new(config)?;
    let mut enc_p = init.encoder;
    let mut head_p = init.head;
    let mut opt_e = Sgd::new(enc_p.len(), schedule);
    let mut opt_h = Sgd::new(head_p.len(), schedule);
    let mut log = TrainLog::default();
    for epoch in 0..schedule.epochs {
        let es = stream.derive("epoch", epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        es.derive("shuffle", 0).draws().shuffle(&mut order);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let targets: Vec<_> = chunk.iter().map(|&i| *train[i].target.as_array()).collect();
            // Joint mode: the labeled image is the anchor; positives and
            // negatives come from its recorded origin.
            let extra: Option<(Vec<ImageTensor>, Vec<Vec<ImageTensor>>)> = match source {
                Some(src) if chunk.len() >= 2 => {
                    let bs = es.derive("batch", bi as u64);
                    let members: Vec<BatchMember> = chunk
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| {
                            let origin = train[i].origin.as_ref().ok_or_else(|| {
                                invalid!("joint training needs the origin of every example")
                            })?;
                            Ok(BatchMember {
                                anchor_clean: origin.clean,
                                positive_clean: partner(
                                    &bs.derive("partner", k as u64),
                                    origin.clean,
                                    src.cleans.len(),
                                ),
                                gene: Gene {
                                    strengths: train[i].target,
                                    stream: origin.stream.clone(),
                                },
                            })
                        })
                        .collect::<Result<_>>()?;
                    let positives = members
                        .iter()
                        .map(|m| positive_for(src, m))
                        .collect::<Result<_>>()?;
                    let negatives = (0..members.len())
                        .map(|i| negatives_for(src, &members, i))
                        .collect::<Result<_>>()?;
                    Some((positives, negatives))
                }
                _ => None,
            };
            let obj = Objective {
                anchors: chunk.iter().map(|&i| &train[i].image).collect(),
                others: extra.as_ref().map(|(p, n)| {
                    (
                        p.iter().collect(),
                        n.iter().map(|set| set.iter().collect()).collect(),
                        schedule.temperature,
                    )
                }),
                targets: Some((targets, weight)),
                train_encoder: true,
            };
            let ev = evaluate(&nets, &enc_p, &head_p, &obj)?;
            opt_e.step(&mut enc_p, &ev.grad_encoder);
            opt_h.step(&mut head_p, &ev.grad_head);
            total += ev.loss * chunk.len() as f64;
        }
        log.push(epoch, Split::Train, total / train.len() as f64);
        if !validation.is_empty() {
            log.push(
                epoch,
                Split::Validation,
                regression_validation(&nets, &enc_p, &head_p, validation)?,
            );
        }
    }
    let mut history = init.history;
    history.push(TrainingRecord {
        mode,
        stream: alloc::format!("{}", stream),
        log_digest: log.digest(),
    });
    let checkpoint = EncoderCheckpoint {
        config: config.clone(),
        stage: Stage::Finetuned,
        encoder: enc_p,
        head: head_p,
        history,
    };
    checkpoint.validate()?;
    Ok(TrainOutcome { checkpoint, log })
}

/// Encoder and head trained together on the regression loss from a random
/// initialization.
pub fn train_scratch(
    config: &EncoderConfig,
    train: &[LabeledExample],
    validation: &[LabeledExample],
    schedule: &Schedule,
    stream: &RngStream,
) -> Result<TrainOutcome> {
    end_to_end(
        config,
        None,
        train,
        validation,
        schedule,
        stream,
        1.0,
        TrainingMode::Scratch,
    )
}

/// Contrastive plus `weight` × regression, end to end from a random
/// initialization. Every example needs an [`Origin`].
pub fn train_joint(
    config: &EncoderConfig,
    source: &PairSource<'_>,
    train: &[LabeledExample],
    validation: &[LabeledExample],
    schedule: &Schedule,
    stream: &RngStream,
    weight: f64,
) -> Result<TrainOutcome> {
    check_pool(source, config)?;
    if !(weight >= 0.0) {
        return Err(invalid!("regression weight must be >= 0"));
    }
    if train.iter().any(|e| {
        e.origin
            .as_ref()
            .map_or(true, |o| o.clean >= source.cleans.len())
    }) {
        return Err(invalid!(
            "joint training needs a valid origin for every example"
        ));
    }
    end_to_end(
        config,
        Some(source),
        train,
        validation,
        schedule,
        stream,
        weight,
        TrainingMode::Joint,
    )
}

/// Embedding of one image.
pub fn encode(checkpoint: &EncoderCheckpoint, x: &ImageTensor) -> Result<Vec<f64>> {
    let net = EncoderNet::new(&checkpoint.config)?;
    Ok(net.forward(&checkpoint.encoder, x)?.embedding)
}

/// Head outputs (each in `[0, 1]`, not renormalized) for one image.
pub fn predict_strengths(
    checkpoint: &EncoderCheckpoint,
    x: &ImageTensor,
) -> Result<NoiseStrengths> {
    if checkpoint.stage != Stage::Finetuned {
        return Err(invalid!(
            "prediction needs a finetuned checkpoint, got {}",
            checkpoint.stage
        ));
    }
    let e = encode(checkpoint, x)?;
    let head = HeadNet::new(&checkpoint.config);
    NoiseStrengths::new(head.forward(&checkpoint.head, &e).output)
}

/// Value and encoder gradient of the contrastive loss on explicit items.
pub fn contrastive_objective_grad(
    checkpoint: &EncoderCheckpoint,
    items: &[ContrastiveItem],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let nets = Nets::new(&checkpoint.config)?;
    let obj = contrastive_objective(items, temperature, true);
    let ev = evaluate(&nets, &checkpoint.encoder, &checkpoint.head, &obj)?;
    Ok((ev.loss, ev.grad_encoder))
}

/// Value and gradients of the end-to-end regression loss on `images`.
pub fn regression_objective(
    checkpoint: &EncoderCheckpoint,
    images: &[ImageTensor],
    targets: &[NoiseStrengths],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if targets.len() != images.len() {
        return Err(invalid!("need one target per image"));
    }
    let nets = Nets::new(&checkpoint.config)?;
    let obj = Objective {
        anchors: images.iter().collect(),
        others: None,
        targets: Some((targets.iter().map(|t| *t.as_array()).collect(), 1.0)),
        train_encoder: true,
    };
    let ev = evaluate(&nets, &checkpoint.encoder, &checkpoint.head, &obj)?;
    Ok((ev.loss, ev.grad_encoder, ev.grad_head))
}

/// Value and gradients of the joint objective on explicit contrastive
/// items (targets belong to the anchors), with the encoder trainable.
pub fn joint_objective(
    checkpoint: &EncoderCheckpoint,
    items: &[ContrastiveItem],
    targets: &[NoiseStrengths],
    temperature: f64,
    weight: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if targets.len() != items.len() {
        return Err(invalid!("need one target per contrastive item"));
    }
    let nets = Nets::new(&checkpoint.config)?;
    let mut obj = contrastive_objective(items, temperature, true);
    obj.targets = Some((targets.iter().map(|t| *t.as_array()).collect(), weight));
    let ev = evaluate(&nets, &checkpoint.encoder, &checkpoint.head, &obj)?;
    Ok((ev.loss, ev.grad_encoder, ev.grad_head))
}
