use super::*;
use crate::engine::{synthesize, EngineConfig, Primitive};
use crate::procedural::{texture, TextureKind};
use crate::rng::RngStream;
use crate::tensor::ImageTensor;
use std::vec::Vec;

fn small_config() -> EncoderConfig {
    EncoderConfig {
        input_size: 16,
        conv_channels: [4, 8],
        hidden_dim: 16,
        embed_dim: 16,
        head_hidden: 8,
        ..EncoderConfig::default()
    }
}

fn cleans(n: usize, size: usize, seed: u64) -> Vec<ImageTensor> {
    (0..n)
        .map(|i| {
            texture(
                TextureKind::Mixed,
                1,
                size,
                size,
                &RngStream::new(seed).derive("clean", i as u64),
            )
        })
        .collect()
}

fn labeled(cleans: &[ImageTensor], n: usize, seed: u64) -> Vec<LabeledExample> {
    let root = RngStream::new(seed);
    (0..n)
        .map(|i| {
            let c = i % cleans.len();
            let s = root.derive("sample", i as u64);
            let ns = synthesize(
                "c",
                &cleans[c],
                &Primitive::ALL,
                &s,
                &EngineConfig::default(),
            )
            .unwrap();
            LabeledExample {
                image: ns.corrupted,
                target: ns.strengths,
                origin: Some(Origin {
                    clean: c,
                    stream: s,
                }),
            }
        })
        .collect()
}

fn schedule(epochs: usize, lr: f64) -> Schedule {
    Schedule {
        epochs,
        batch_size: 8,
        learning_rate: lr,
        ..Schedule::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let cfg = small_config();
    let pool = cleans(10, 16, 1);
    let order = Primitive::ALL;
    let src = PairSource {
        cleans: &pool,
        order: &order,
        engine: EngineConfig::default(),
        shared_realization: true,
    };
    let init = EncoderCheckpoint::initialize(&cfg).unwrap();
    let pre = pretrain(&init, &src, &schedule(2, 0.0), &RngStream::new(2)).unwrap();
    assert_eq!(pre.checkpoint.encoder, init.encoder);
    let data = labeled(&pool, 12, 3);
    let ft = finetune(
        &pre.checkpoint,
        &data,
        &[],
        &schedule(2, 0.0),
        &RngStream::new(4),
    )
    .unwrap();
    assert_eq!(ft.checkpoint.head, init.head);
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config();
    let pool = cleans(10, 16, 5);
    let order = Primitive::ALL;
    let src = PairSource {
        cleans: &pool,
        order: &order,
        engine: EngineConfig::default(),
        shared_realization: true,
    };
    let init = EncoderCheckpoint::initialize(&cfg).unwrap();
    let a = pretrain(&init, &src, &schedule(2, 0.05), &RngStream::new(6)).unwrap();
    let b = pretrain(&init, &src, &schedule(2, 0.05), &RngStream::new(6)).unwrap();
    assert_eq!(a, b);
    let c = pretrain(&init, &src, &schedule(2, 0.05), &RngStream::new(7)).unwrap();
    assert_ne!(a.checkpoint.encoder, c.checkpoint.encoder);
    let data = labeled(&pool, 12, 8);
    let j1 = train_joint(
        &cfg,
        &src,
        &data,
        &data,
        &schedule(1, 0.05),
        &RngStream::new(9),
        1.0,
    )
    .unwrap();
    let j2 = train_joint(
        &cfg,
        &src,
        &data,
        &data,
        &schedule(1, 0.05),
        &RngStream::new(9),
        1.0,
    )
    .unwrap();
    assert_eq!(j1, j2);
}

#[test]
fn finetuning_freezes_the_encoder() {
    let cfg = small_config();
    let pool = cleans(10, 16, 10);
    let order = Primitive::ALL;
    let src = PairSource {
        cleans: &pool,
        order: &order,
        engine: EngineConfig::default(),
        shared_realization: true,
    };
    let pre = pretrain(
        &EncoderCheckpoint::initialize(&cfg).unwrap(),
        &src,
        &schedule(1, 0.05),
        &RngStream::new(11),
    )
    .unwrap()
    .checkpoint;
    let data = labeled(&pool, 16, 12);
    let ft = finetune(&pre, &data, &data, &schedule(5, 0.1), &RngStream::new(13)).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ft.checkpoint.encoder), bits(&pre.encoder));
    assert_ne!(ft.checkpoint.head, pre.head);
    assert_eq!(ft.checkpoint.stage, Stage::Finetuned);
    assert_eq!(ft.checkpoint.history.len(), 2);
    assert_eq!(ft.checkpoint.log_digest(), Some(ft.log.digest()));
    let first = ft.log.entries[0].loss;
    let last = ft.log.last(Split::Train).unwrap();
    assert!(last < first, "{} !< {}", last, first);
}

#[test]
fn pretraining_reduces_contrastive_loss() {
    let cfg = EncoderConfig {
        activation: Activation::Relu,
        ..small_config()
    };
    let pool = cleans(24, 16, 14);
    let order = Primitive::ALL;
    let src = PairSource {
        cleans: &pool,
        order: &order,
        engine: EngineConfig::default(),
        shared_realization: false,
    };
    let out = pretrain(
        &EncoderCheckpoint::initialize(&cfg).unwrap(),
        &src,
        &schedule(15, 0.05),
        &RngStream::new(15),
    )
    .unwrap();
    let val: Vec<f64> = out
        .log
        .entries
        .iter()
        .filter(|e| e.split == Split::Validation)
        .map(|e| e.loss)
        .collect();
    assert!(val[val.len() - 1] < val[0], "{:?}", val);
}

#[test]
fn stage_and_shape_are_enforced() {
    let cfg = small_config();
    let init = EncoderCheckpoint::initialize(&cfg).unwrap();
    let x = cleans(1, 16, 99).remove(0);
    assert!(predict_strengths(&init, &x).is_err());
    assert_eq!(encode(&init, &x).unwrap().len(), cfg.embed_dim);
    let e = encode(&init, &x).unwrap();
    let norm: f64 = e.iter().map(|v| v * v).sum();
    assert!((norm - 1.0).abs() < 1e-12);
    assert!(encode(&init, &ImageTensor::filled(1, 17, 16, 0.5)).is_err());
    let pool = cleans(4, 16, 16);
    let data = labeled(&pool, 4, 17);
    let ft = finetune(&init, &data, &[], &schedule(1, 0.01), &RngStream::new(1)).unwrap();
    let p = predict_strengths(&ft.checkpoint, &x).unwrap();
    assert!(p.as_array().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(finetune(
        &ft.checkpoint,
        &data,
        &[],
        &schedule(1, 0.01),
        &RngStream::new(1)
    )
    .is_err());
    let mut bad = init.clone();
    bad.head.pop();
    assert!(bad.validate().is_err());
    let one = cleans(1, 16, 3);
    let order = Primitive::ALL;
    let src = PairSource {
        cleans: &one,
        order: &order,
        engine: EngineConfig::default(),
        shared_realization: true,
    };
    assert!(pretrain(&init, &src, &schedule(1, 0.01), &RngStream::new(1)).is_err());
}

#[test]
fn joint_needs_origins() {
    let cfg = small_config();
    let pool = cleans(4, 16, 18);
    let order = Primitive::ALL;
    let src = PairSource {
        cleans: &pool,
        order: &order,
        engine: EngineConfig::default(),
        shared_realization: true,
    };
    let mut data = labeled(&pool, 4, 19);
    data[1].origin = None;
    assert!(train_joint(
        &cfg,
        &src,
        &data,
        &[],
        &schedule(1, 0.01),
        &RngStream::new(1),
        1.0
    )
    .is_err());
}

#[test]
fn joint_loss_is_sum_of_parts() {
    let cfg = EncoderConfig::tiny(3);
    let ckpt = EncoderCheckpoint::initialize(&cfg).unwrap();
    let pool = cleans(3, 8, 20);
    let order = Primitive::ALL;
    let src = PairSource {
        cleans: &pool,
        order: &order,
        engine: EngineConfig::default(),
        shared_realization: true,
    };
    let root = RngStream::new(21);
    let members: Vec<BatchMember> = (0..3)
        .map(|i| BatchMember {
            anchor_clean: i,
            positive_clean: (i + 1) % 3,
            gene: Gene::draw(&root.derive("g", i as u64)),
        })
        .collect();
    let items = make_contrastive_batch(&src, &members).unwrap();
    let targets: Vec<_> = (0..3)
        .map(|i| crate::engine::sample_strengths(&root.derive("t", i)))
        .collect();
    let (joint, _, _) = joint_objective(&ckpt, &items, &targets, 0.3, 1.0).unwrap();
    let a: Vec<_> = items
        .iter()
        .map(|t| encode(&ckpt, &t.anchor).unwrap())
        .collect();
    let p: Vec<_> = items
        .iter()
        .map(|t| encode(&ckpt, &t.positive).unwrap())
        .collect();
    let n: Vec<Vec<_>> = items
        .iter()
        .map(|t| {
            t.negatives
                .iter()
                .map(|x| encode(&ckpt, x).unwrap())
                .collect()
        })
        .collect();
    let c = info_nce_loss(
        &ContrastiveEmbeddings {
            anchors: &a,
            positives: &p,
            negatives: &n,
        },
        0.3,
    )
    .unwrap();
    let head = HeadNet::new(&cfg);
    let preds: Vec<_> = a
        .iter()
        .map(|e| crate::engine::NoiseStrengths::new(head.forward(&ckpt.head, e).output).unwrap())
        .collect();
    let r = mse_head_loss(&preds, &targets).unwrap();
    assert!((joint - (c + r)).abs() < 1e-12);
}

#[test]
fn batch_members_follow_the_pairing_rules() {
    let pool = cleans(4, 8, 22);
    let order = Primitive::ALL;
    let src = PairSource {
        cleans: &pool,
        order: &order,
        engine: EngineConfig::default(),
        shared_realization: true,
    };
    let root = RngStream::new(23);
    let members: Vec<BatchMember> = (0..3)
        .map(|i| BatchMember {
            anchor_clean: i,
            positive_clean: 3 - i,
            gene: Gene::draw(&root.derive("g", i as u64)),
        })
        .collect();
    let items = make_contrastive_batch(&src, &members).unwrap();
    let cfg = EngineConfig::default();
    for (i, it) in items.iter().enumerate() {
        let m = &members[i];
        let with = |clean: usize, g: &Gene| {
            crate::engine::compose_image(&pool[clean], &g.strengths, &order, &g.stream, &cfg)
                .unwrap()
        };
        assert_eq!(it.anchor, with(m.anchor_clean, &m.gene));
        assert_eq!(it.positive, with(m.positive_clean, &m.gene));
        assert_eq!(it.negatives.len(), 2);
        let others: Vec<_> = (0..3).filter(|&j| j != i).collect();
        for (neg, &j) in it.negatives.iter().zip(&others) {
            assert_eq!(*neg, with(m.anchor_clean, &members[j].gene));
        }
    }
}
