//! Contrastive and regression objectives with analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{NoiseStrengths, NUM_COMPONENTS};
use crate::error::invalid;
use crate::math;
use crate::Result;

/// Embeddings for one contrastive batch. `anchors[i]` pairs with
/// `positives[i]`; `negatives[i]` holds the negatives contrasted against
/// anchor `i` only.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveEmbeddings<'a> {
    pub anchors: &'a [Vec<f64>],
    pub positives: &'a [Vec<f64>],
    pub negatives: &'a [Vec<Vec<f64>>],
}

/// Gradients of the batch loss with respect to each embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrads {
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<Vec<f64>>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_batch(b: &ContrastiveEmbeddings<'_>, tau: f64) -> Result<usize> {
    let n = b.anchors.len();
    if n == 0 {
        return Err(invalid!("contrastive batch is empty"));
    }
    if b.positives.len() != n || b.negatives.len() != n {
        return Err(invalid!(
            "batch sizes differ: {} anchors, {} positives, {} negative sets",
            n,
            b.positives.len(),
            b.negatives.len()
        ));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(invalid!("temperature must be positive, got {}", tau));
    }
    let d = b.anchors[0].len();
    let mut all = b
        .anchors
        .iter()
        .chain(b.positives)
        .chain(b.negatives.iter().flatten());
    if d == 0 || all.any(|e| e.len() != d) {
        return Err(invalid!("embeddings must share a positive dimension"));
    }
    Ok(n)
}

/// Mean over anchors of `−log( e^{s⁺/τ} / (e^{s⁺/τ} + Σ_j e^{s⁻_j/τ}) )`,
/// with `s⁺ = a_i·p_i` and `s⁻_j = a_i·n_ij`.
pub fn info_nce_loss(batch: &ContrastiveEmbeddings<'_>, tau: f64) -> Result<f64> {
    info_nce_with_grad(batch, tau).map(|(l, _)| l)
}

pub fn info_nce_with_grad(
    batch: &ContrastiveEmbeddings<'_>,
    tau: f64,
) -> Result<(f64, ContrastiveGrads)> {
    let n = check_batch(batch, tau)?;
    let d = batch.anchors[0].len();
    let mut g = ContrastiveGrads {
        anchors: vec![vec![0.0; d]; n],
        positives: vec![vec![0.0; d]; n],
        negatives: batch
            .negatives
            .iter()
            .map(|s| vec![vec![0.0; d]; s.len()])
            .collect(),
    };
    let scale = 1.0 / (n as f64 * tau);
    let mut total = 0.0;
    for i in 0..n {
        let a = &batch.anchors[i];
        let negs = &batch.negatives[i];
        // Slot 0 holds the positive.
        let mut logits = Vec::with_capacity(negs.len() + 1);
        logits.push(dot(a, &batch.positives[i]) / tau);
        logits.extend(negs.iter().map(|v| dot(a, v) / tau));
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|l| math::exp(l - m)).collect();
        let z: f64 = probs.iter().sum();
        total += m + math::ln(z) - logits[0];
        for p in probs.iter_mut() {
            *p /= z;
        }
        let coef0 = scale * (probs[0] - 1.0);
        for k in 0..d {
            g.anchors[i][k] += coef0 * batch.positives[i][k];
            g.positives[i][k] += coef0 * a[k];
        }
        for (j, v) in negs.iter().enumerate() {
            let c = scale * probs[j + 1];
            for k in 0..d {
                g.anchors[i][k] += c * v[k];
                g.negatives[i][j][k] += c * a[k];
            }
        }
    }
    Ok((total / n as f64, g))
}

/// Mean over samples of the summed squared error across the six components.
pub fn mse_head_loss(predicted: &[NoiseStrengths], target: &[NoiseStrengths]) -> Result<f64> {
    let p: Vec<[f64; NUM_COMPONENTS]> = predicted.iter().map(|s| *s.as_array()).collect();
    let t: Vec<[f64; NUM_COMPONENTS]> = target.iter().map(|s| *s.as_array()).collect();
    mse_with_grad(&p, &t).map(|(l, _)| l)
}

/// Loss and `∂L/∂predicted` for raw six-vectors.
pub fn mse_with_grad(
    predicted: &[[f64; NUM_COMPONENTS]],
    target: &[[f64; NUM_COMPONENTS]],
) -> Result<(f64, Vec<[f64; NUM_COMPONENTS]>)> {
    if predicted.is_empty() || predicted.len() != target.len() {
        return Err(invalid!(
            "mse needs matching non-empty batches, got {} and {}",
            predicted.len(),
            target.len()
        ));
    }
    let n = predicted.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(predicted.len());
    for (p, t) in predicted.iter().zip(target) {
        let mut g = [0.0; NUM_COMPONENTS];
        for k in 0..NUM_COMPONENTS {
            let r = p[k] - t[k];
            loss += r * r;
            g[k] = 2.0 * r / n;
        }
        grads.push(g);
    }
    Ok((loss / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_unit(d: usize, s: &RngStream) -> Vec<f64> {
        let mut r = s.draws();
        let v: Vec<f64> = (0..d).map(|_| r.standard_normal()).collect();
        let n = math::sqrt(dot(&v, &v));
        v.into_iter().map(|x| x / n).collect()
    }

    type Batch = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>);

    /// `n` triplets with `n − 1` negatives per anchor.
    fn batch(n: usize, d: usize, seed: u64) -> Batch {
        let s = RngStream::new(seed);
        let mk = |label: &str| {
            (0..n)
                .map(|i| random_unit(d, &s.derive(label, i as u64)))
                .collect()
        };
        let negs = (0..n)
            .map(|i| {
                (0..n - 1)
                    .map(|j| random_unit(d, &s.derive("n", (i * n + j) as u64)))
                    .collect()
            })
            .collect();
        (mk("a"), mk("p"), negs)
    }

    fn emb<'a>(b: &'a Batch) -> ContrastiveEmbeddings<'a> {
        ContrastiveEmbeddings {
            anchors: &b.0,
            positives: &b.1,
            negatives: &b.2,
        }
    }

    #[test]
    fn single_triplet_loss_is_zero() {
        let b = batch(1, 8, 1);
        assert!(b.2[0].is_empty());
        assert_eq!(info_nce_loss(&emb(&b), 0.1).unwrap(), 0.0);
    }

    #[test]
    fn identical_embeddings_give_log_n() {
        let e = vec![0.6, 0.8, 0.0];
        let n = 7;
        let b: Batch = (
            vec![e.clone(); n],
            vec![e.clone(); n],
            vec![vec![e; n - 1]; n],
        );
        let l = info_nce_loss(&emb(&b), 0.2).unwrap();
        assert!((l - math::ln(7.0)).abs() < 1e-12);
    }

    #[test]
    fn matches_scalar_oracle() {
        let b = batch(4, 5, 9);
        let tau = 0.1;
        let mut total = 0.0;
        for i in 0..4 {
            let mut sp = 0.0;
            for k in 0..5 {
                sp += b.0[i][k] * b.1[i][k];
            }
            let mut denom = libm::exp(sp / tau);
            for j in 0..3 {
                let mut sn = 0.0;
                for k in 0..5 {
                    sn += b.0[i][k] * b.2[i][j][k];
                }
                denom += libm::exp(sn / tau);
            }
            total -= libm::log(libm::exp(sp / tau) / denom);
        }
        let l = info_nce_loss(&emb(&b), tau).unwrap();
        assert!((l - total / 4.0).abs() < 1e-12, "{} vs {}", l, total / 4.0);
    }

    #[test]
    fn permuting_triplets_leaves_loss_unchanged() {
        let b = batch(6, 5, 2);
        let perm = [3, 0, 5, 1, 4, 2];
        let p: Batch = (
            perm.iter().map(|&i| b.0[i].clone()).collect(),
            perm.iter().map(|&i| b.1[i].clone()).collect(),
            perm.iter().map(|&i| b.2[i].clone()).collect(),
        );
        let l1 = info_nce_loss(&emb(&b), 0.1).unwrap();
        let l2 = info_nce_loss(&emb(&p), 0.1).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn large_logits_stay_finite() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b: Batch = (
            a.clone(),
            a.clone(),
            vec![vec![a[1].clone()], vec![a[0].clone()]],
        );
        let l = info_nce_loss(&emb(&b), 1e-4).unwrap();
        assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let b = batch(4, 3, 3);
        let tau = 0.3;
        let (_, g) = info_nce_with_grad(&emb(&b), tau).unwrap();
        let h = 1e-6;
        let check = |bump: &dyn Fn(&mut Batch, f64), an: f64| {
            let mut up = b.clone();
            bump(&mut up, h);
            let mut down = b.clone();
            bump(&mut down, -h);
            let fd = (info_nce_loss(&emb(&up), tau).unwrap()
                - info_nce_loss(&emb(&down), tau).unwrap())
                / (2.0 * h);
            assert!((fd - an).abs() < 1e-8, "{} vs {}", fd, an);
        };
        for i in 0..4 {
            for k in 0..3 {
                check(&|b: &mut Batch, h| b.0[i][k] += h, g.anchors[i][k]);
                check(&|b: &mut Batch, h| b.1[i][k] += h, g.positives[i][k]);
                for j in 0..3 {
                    check(&|b: &mut Batch, h| b.2[i][j][k] += h, g.negatives[i][j][k]);
                }
            }
        }
    }

    #[test]
    fn invalid_batches_are_rejected() {
        let empty: Batch = (vec![], vec![], vec![]);
        assert!(info_nce_loss(&emb(&empty), 0.1).is_err());
        let one = batch(1, 2, 4);
        assert!(info_nce_loss(&emb(&one), 0.0).is_err());
        let mut ragged = batch(2, 2, 5);
        ragged.2[1][0].push(1.0);
        assert!(info_nce_loss(&emb(&ragged), 0.1).is_err());
        let mut short = batch(2, 2, 6);
        short.1.pop();
        assert!(info_nce_loss(&emb(&short), 0.1).is_err());
    }

    #[test]
    fn mse_matches_hand_values() {
        let p = NoiseStrengths::new([0.5, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap();
        let t = NoiseStrengths::new([0.3, 0.1, 0.1, 0.1, 0.1, 0.3]).unwrap();
        let l = mse_head_loss(&[p, t], &[t, t]).unwrap();
        assert!((l - 0.04).abs() < 1e-15);
        assert_eq!(mse_head_loss(&[t], &[t]).unwrap(), 0.0);
        let q = NoiseStrengths::new([0.4, 0.1, 0.1, 0.1, 0.1, 0.3]).unwrap();
        assert!((mse_head_loss(&[q], &[t]).unwrap() - 0.01).abs() < 1e-15);
        assert!(mse_head_loss(&[p], &[]).is_err());
    }

    #[test]
    fn mse_matches_loop_oracle() {
        let s = RngStream::new(12);
        let p: Vec<NoiseStrengths> = (0..9)
            .map(|i| crate::engine::sample_strengths(&s.derive("p", i)))
            .collect();
        let t: Vec<NoiseStrengths> = (0..9)
            .map(|i| crate::engine::sample_strengths(&s.derive("t", i)))
            .collect();
        let mut acc = 0.0;
        for i in 0..9 {
            for k in 0..NUM_COMPONENTS {
                let r = p[i].as_array()[k] - t[i].as_array()[k];
                acc += r * r;
            }
        }
        assert!((mse_head_loss(&p, &t).unwrap() - acc / 9.0).abs() < 1e-12);
    }
}
