//! Central-difference gradient checks.

use alloc::vec::Vec;

use super::checkpoint::EncoderCheckpoint;
use super::train::{contrastive_objective_grad, joint_objective, regression_objective, ContrastiveItem};
use crate::engine::NoiseStrengths;
use crate::error::invalid;
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Denominator floor for the relative error, so that near-zero gradients
/// are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Accepted finite-difference steps.
pub const STEP_RANGE: (f64, f64) = (1e-7, 1e-3);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
}

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` with central differences of `f` at `params`.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<GradCheckReport> {
    if params.len() != analytic.len() || params.is_empty() {
        return Err(invalid!("gradient and parameter lengths differ"));
    }
    if !(step >= STEP_RANGE.0 && step <= STEP_RANGE.1) {
        return Err(invalid!(
            "finite-difference step must lie in [{}, {}], got {}",
            STEP_RANGE.0,
            STEP_RANGE.1,
            step
        ));
    }
    let mut x: Vec<f64> = params.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_index: 0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x)?;
        x[i] = orig - step;
        let down = f(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NumericFailure(alloc::format!(
                "loss is not finite near parameter {}",
                i
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error || err.is_nan() {
            report.max_relative_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Checks every encoder and head parameter against the joint objective.
/// Indices past the encoder count refer to head parameters.
pub fn grad_check_model(
    checkpoint: &EncoderCheckpoint,
    items: &[ContrastiveItem],
    targets: &[NoiseStrengths],
    temperature: f64,
    weight: f64,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, ge, gh) = joint_objective(checkpoint, items, targets, temperature, weight)?;
    let ne = checkpoint.encoder.len();
    let mut params = checkpoint.encoder.clone();
    params.extend_from_slice(&checkpoint.head);
    let mut analytic = ge;
    analytic.extend_from_slice(&gh);
    let mut probe = checkpoint.clone();
    grad_check(
        |p| {
            probe.encoder.copy_from_slice(&p[..ne]);
            probe.head.copy_from_slice(&p[ne..]);
            joint_objective(&probe, items, targets, temperature, weight).map(|r| r.0)
        },
        &params,
        &analytic,
        step,
    )
}

/// Checks every encoder parameter against the contrastive loss.
pub fn grad_check_contrastive(
    checkpoint: &EncoderCheckpoint,
    items: &[ContrastiveItem],
    temperature: f64,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = contrastive_objective_grad(checkpoint, items, temperature)?;
    let mut probe = checkpoint.clone();
    grad_check(
        |p| {
            probe.encoder.copy_from_slice(p);
            contrastive_objective_grad(&probe, items, temperature).map(|r| r.0)
        },
        &checkpoint.encoder,
        &analytic,
        step,
    )
}

/// Checks every encoder and head parameter against the end-to-end MSE loss.
pub fn grad_check_mse(
    checkpoint: &EncoderCheckpoint,
    images: &[ImageTensor],
    targets: &[NoiseStrengths],
    step: f64,
) -> Result<GradCheckReport> {
    let (_, ge, gh) = regression_objective(checkpoint, images, targets)?;
    let ne = checkpoint.encoder.len();
    let mut params = checkpoint.encoder.clone();
    params.extend_from_slice(&checkpoint.head);
    let mut analytic = ge;
    analytic.extend_from_slice(&gh);
    let mut probe = checkpoint.clone();
    grad_check(
        |p| {
            probe.encoder.copy_from_slice(&p[..ne]);
            probe.head.copy_from_slice(&p[ne..]);
            regression_objective(&probe, images, targets).map(|r| r.0)
        },
        &params,
        &analytic,
        step,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EngineConfig, Primitive};
    use crate::model::config::{Activation, EncoderConfig};
    use crate::model::train::{make_contrastive_batch, BatchMember, Gene, PairSource};
    use crate::procedural::{texture, TextureKind};
    use crate::rng::RngStream;
    use crate::tensor::ImageTensor;

    #[test]
    fn linear_function_is_exact() {
        let r = grad_check(|p| Ok(3.0 * p[0]), &[0.7], &[3.0], 1e-3).unwrap();
        assert!(r.max_relative_error < 1e-10, "{:?}", r);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let r = grad_check(|p| Ok(p[0] * p[0] + p[1]), &[1.0, 2.0], &[2.0, 1.5], 1e-5).unwrap();
        assert_eq!(r.worst_index, 1);
        assert!(r.max_relative_error > 0.3);
    }

    fn tiny_batch(cfg: &EncoderConfig) -> (Vec<ContrastiveItem>, Vec<NoiseStrengths>) {
        let s = cfg.input_size;
        let cleans: Vec<ImageTensor> = (0..4)
            .map(|i| {
                texture(
                    TextureKind::BASIC[i],
                    1,
                    s,
                    s,
                    &RngStream::new(40 + i as u64),
                )
            })
            .collect();
        let order = Primitive::ALL;
        let src = PairSource {
            cleans: &cleans,
            order: &order,
            engine: EngineConfig::default(),
            shared_realization: true,
        };
        let root = RngStream::new(77);
        let members: Vec<BatchMember> = (0..3)
            .map(|i| BatchMember {
                anchor_clean: i,
                positive_clean: i + 1,
                gene: Gene::draw(&root.derive("g", i as u64)),
            })
            .collect();
        let items = make_contrastive_batch(&src, &members).unwrap();
        (items, members.iter().map(|m| m.gene.strengths).collect())
    }

    #[test]
    fn every_model_parameter_matches_differences() {
        for (activation, normalize) in [(Activation::Tanh, true), (Activation::Softplus, false)] {
            let cfg = EncoderConfig {
                activation,
                normalize,
                ..EncoderConfig::tiny(5)
            };
            let ckpt = EncoderCheckpoint::initialize(&cfg).unwrap();
            let (t, y) = tiny_batch(&cfg);
            let r = grad_check_model(&ckpt, &t, &y, 0.5, 1.0, 1e-5).unwrap();
            assert_eq!(r.checked, ckpt.encoder.len() + ckpt.head.len());
            assert!(r.max_relative_error < 1e-5, "{:?} {:?}", activation, r);
        }
    }

    #[test]
    fn linear_head_parameters_match_differences() {
        let cfg = EncoderConfig {
            head_hidden: 0,
            ..EncoderConfig::tiny(6)
        };
        let ckpt = EncoderCheckpoint::initialize(&cfg).unwrap();
        let (t, y) = tiny_batch(&cfg);
        let r = grad_check_model(&ckpt, &t, &y, 0.2, 2.0, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-5, "{:?}", r);
    }

    #[test]
    fn separate_losses_match_differences() {
        let cfg = EncoderConfig::tiny(7);
        let ckpt = EncoderCheckpoint::initialize(&cfg).unwrap();
        let (t, y) = tiny_batch(&cfg);
        let r = grad_check_contrastive(&ckpt, &t, 0.1, 1e-5).unwrap();
        assert_eq!(r.checked, ckpt.encoder.len());
        assert!(r.max_relative_error < 1e-5, "{:?}", r);
        let images: Vec<ImageTensor> = t.iter().map(|i| i.anchor.clone()).collect();
        let r = grad_check_mse(&ckpt, &images, &y, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-5, "{:?}", r);
    }

    #[test]
    fn step_and_finiteness_are_validated() {
        let f = |p: &[f64]| Ok(p[0]);
        assert!(grad_check(f, &[0.0], &[1.0], 1e-2).is_err());
        assert!(grad_check(f, &[0.0], &[1.0], 1e-8).is_err());
        let r = grad_check(|p: &[f64]| Ok(if p[0] > 0.0 { f64::INFINITY } else { 0.0 }), &[0.0], &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NumericFailure(_))));
    }
}
