//! Closed-form per-primitive estimators.
//!
//! These are the non-learned reference for the engine: each one targets a
//! single primitive and recovers its strength from moments of the image (or
//! of the residual against a clean reference).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::engine::{aniso_kernel, NoiseStrengths, Primitive, NUM_COMPONENTS};
use crate::error::{invalid, undefined};
use crate::math;
use crate::stats::{self, robust_sigma};
use crate::tensor::{conv2d_same, ImageTensor, Kernel2d};
use crate::Result;

/// Above this many distinct values an image is treated as unquantized.
pub const QUANT_UNIQUE_LIMIT: usize = 1 << 12;
/// Pixel mass that must sit on the candidate lattice.
pub const QUANT_COVERAGE: f64 = 0.99;
/// Equal-mass clean-intensity bins for the Poisson gain fit.
pub const POISSON_BINS: usize = 16;
/// Bins with fewer pixels than this are dropped.
pub const POISSON_MIN_BIN: usize = 100;

/// Refinement passes and minimum support for the clamp-aware Gaussian MAD.
const HEADROOM_PASSES: usize = 8;
const HEADROOM_MIN_PIXELS: usize = 64;

const VALUE_TOL: f64 = 1e-9;
const LATTICE_TOL: f64 = 1e-6;
const MAX_GAP_CANDIDATES: usize = 16;

/// Estimated strengths plus estimator-specific intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    pub strengths: NoiseStrengths,
    pub diagnostics: BTreeMap<String, f64>,
}

impl BaselineEstimate {
    /// The five noise estimates rescaled to sum to one (all zero if none fired).
    pub fn normalized_noise(&self) -> [f64; 5] {
        let mut v = [0.0; 5];
        v.copy_from_slice(&self.strengths.as_array()[..5]);
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            for x in &mut v {
                *x /= total;
            }
        }
        v
    }

    /// Argmax of [`normalized_noise`](Self::normalized_noise), or
    /// [`Primitive::Clean`] when no estimator fired.
    pub fn dominant(&self) -> Primitive {
        let v = self.normalized_noise();
        if v.iter().all(|&x| x == 0.0) {
            Primitive::Clean
        } else {
            crate::engine::dominant_of(&v)
        }
    }
}

fn check_shapes(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(invalid!(
            "shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

/// Noise gain of `x − conv(x, k)` for unit white noise: `‖δ − k‖₂`.
pub fn highpass_gain(k: &Kernel2d) -> f64 {
    let (cr, cc) = (k.rows() / 2, k.cols() / 2);
    let mut acc = 0.0;
    for r in 0..k.rows() {
        for c in 0..k.cols() {
            let delta = if r == cr && c == cc { 1.0 } else { 0.0 };
            let v = delta - k.at(r, c);
            acc += v * v;
        }
    }
    math::sqrt(acc)
}

/// Gaussian noise level.
///
/// With a clean reference: `1.4826·MAD` of the residual, restricted to
/// pixels with at least σ of headroom so clamping does not shrink it. Blind: `1.4826·MAD`
/// of `x − mean3×3(x)`, divided by the high-pass gain of that filter.
pub fn estimate_gaussian_sigma(x: &ImageTensor, clean: Option<&ImageTensor>) -> Result<f64> {
    match clean {
        Some(c) => {
            check_shapes(x, c)?;
            let r = x.sub(c)?;
            // Clamping caps a residual at the pixel's headroom min(c, 1 − c).
            // The MAD only asks whether |r| is below ~0.67σ, so it stays exact
            // on pixels whose headroom exceeds σ; refine on those.
            let mut sigma = robust_sigma(r.data());
            for _ in 0..HEADROOM_PASSES {
                let kept: Vec<f64> = r
                    .data()
                    .iter()
                    .zip(c.data())
                    .filter(|(_, &v)| v.min(1.0 - v) >= sigma)
                    .map(|(&d, _)| d)
                    .collect();
                if kept.len() < HEADROOM_MIN_PIXELS {
                    break;
                }
                let next = robust_sigma(&kept);
                if next == sigma {
                    break;
                }
                sigma = next;
            }
            Ok(sigma)
        }
        None => {
            let k = Kernel2d::mean(3)?;
            let hp = x.sub(&conv2d_same(x, &k))?;
            Ok(robust_sigma(hp.data()) / highpass_gain(&k))
        }
    }
}

/// `(#zeros + #ones) / (2n)`.
pub fn estimate_sp_fraction(x: &ImageTensor) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let hits = x.data().iter().filter(|&&v| v == 0.0 || v == 1.0).count();
    hits as f64 / (2 * x.len()) as f64
}

fn unique_sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for x in v {
        match out.last() {
            Some(&last) if x - last <= VALUE_TOL => {}
            _ => out.push(x),
        }
    }
    out
}

fn on_lattice(v: f64, step: f64) -> bool {
    let q = v / step;
    (q - math::round(q)).abs() <= LATTICE_TOL
}

/// Quantization step: the smallest gap between distinct pixel values whose
/// multiples hold at least 99% of the unsaturated pixels. Zero when the
/// image has more than [`QUANT_UNIQUE_LIMIT`] distinct values or no gap
/// qualifies.
pub fn estimate_quant_step(x: &ImageTensor) -> f64 {
    // Pixels clamped to 1 need not lie on the lattice; they count as covered
    // but give no evidence about the step.
    let saturated = |v: f64| v >= 1.0 - VALUE_TOL;
    let all = unique_sorted(x.data());
    if all.len() < 2 || all.len() > QUANT_UNIQUE_LIMIT {
        return 0.0;
    }
    let uniques: Vec<f64> = all.into_iter().filter(|&v| !saturated(v)).collect();
    if uniques.len() < 2 {
        return 0.0;
    }
    let gaps = unique_sorted(&uniques.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>());
    for &gap in gaps.iter().take(MAX_GAP_CANDIDATES) {
        if gap < LATTICE_TOL {
            continue;
        }
        let covered = x
            .data()
            .iter()
            .filter(|&&v| saturated(v) || on_lattice(v, gap))
            .count();
        if (covered as f64) < QUANT_COVERAGE * x.len() as f64 {
            continue;
        }
        // Refine on the distinct lattice values: step = Σ k v / Σ k².
        let (mut kv, mut kk) = (0.0, 0.0);
        for &v in &uniques {
            if on_lattice(v, gap) {
                let k = math::round(v / gap);
                kv += k * v;
                kk += k * k;
            }
        }
        return if kk > 0.0 { kv / kk } else { gap };
    }
    0.0
}

fn lag1_pairs(r: &ImageTensor, dy: usize, dx: usize) -> (Vec<f64>, Vec<f64>) {
    let (ch, h, w) = r.shape();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for c in 0..ch {
        for y in 0..h.saturating_sub(dy) {
            for x in 0..w.saturating_sub(dx) {
                a.push(r.get(c, y, x));
                b.push(r.get(c, y + dy, x + dx));
            }
        }
    }
    (a, b)
}

/// Mean of the horizontal and vertical lag-1 autocorrelations of `r`;
/// zero for a degenerate (constant) field.
pub fn lag1_autocorrelation(r: &ImageTensor) -> f64 {
    let mut acc = 0.0;
    let mut n = 0;
    for (dy, dx) in [(0, 1), (1, 0)] {
        let (a, b) = lag1_pairs(r, dy, dx);
        if let Ok(rho) = stats::pearson(&a, &b) {
            acc += rho;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// Lag-1 autocorrelation of the residual `x − clean`.
pub fn estimate_spatial_corr(x: &ImageTensor, clean: &ImageTensor) -> Result<f64> {
    check_shapes(x, clean)?;
    Ok(lag1_autocorrelation(&x.sub(clean)?))
}

/// Expected lag-1 autocorrelation of white noise filtered by `k`.
pub fn filtered_noise_lag1(k: &Kernel2d) -> f64 {
    let ss = k.sum_of_squares();
    0.5 * (k.autocorrelation(0, 1) + k.autocorrelation(1, 0)) / ss
}

/// Anisotropic strength: robust residual spread over the kernel's noise gain `‖K‖₂`.
pub fn estimate_aniso_sigma(x: &ImageTensor, clean: &ImageTensor) -> Result<f64> {
    check_shapes(x, clean)?;
    let gain = math::sqrt(aniso_kernel().sum_of_squares());
    Ok(robust_sigma(x.sub(clean)?.data()) / gain)
}

/// Poisson gain fit with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonGainFit {
    /// Estimated `η_P`.
    pub gain: f64,
    /// OLS slope of raw residual variance against bin mean intensity.
    pub raw_slope: f64,
    /// OLS intercept of the same fit; absorbs additive (signal-independent) variance.
    pub raw_intercept: f64,
    pub bins_used: usize,
}

/// Fits the literal shot-noise model `x + Poisson(η·x)` under clamping.
///
/// Pixels are split into [`POISSON_BINS`] equal-mass bins of clean
/// intensity. Under the model every nonzero draw saturates the pixel, so
/// the residual divided by its headroom `1 − x` is Bernoulli with
/// `p = 1 − exp(−η·x)`. Each bin's headroom-normalized variance `p(1−p)`
/// is inverted for the rate `λ = −ln(1 − p)`, and `η` is the least-squares
/// slope of `λ` on bin intensity through the origin.
pub fn fit_poisson_gain(x: &ImageTensor, clean: &ImageTensor) -> Result<PoissonGainFit> {
    check_shapes(x, clean)?;
    let c = clean.data();
    let first = c.first().copied().unwrap_or(0.0);
    if c.iter().all(|&v| (v - first).abs() <= VALUE_TOL) {
        return Err(invalid!(
            "poisson gain needs at least two clean intensity levels"
        ));
    }
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.sort_by(|&i, &j| c[i].total_cmp(&c[j]).then(i.cmp(&j)));
    let n = idx.len();
    let mut means = Vec::new();
    let mut rates = Vec::new();
    let mut raw_var = Vec::new();
    for b in 0..POISSON_BINS {
        let lo = b * n / POISSON_BINS;
        let hi = (b + 1) * n / POISSON_BINS;
        let members: Vec<usize> = idx[lo..hi]
            .iter()
            .copied()
            .filter(|&i| 1.0 - c[i] > 1e-6)
            .collect();
        if members.len() < POISSON_MIN_BIN {
            continue;
        }
        let m = members.iter().map(|&i| c[i]).sum::<f64>() / members.len() as f64;
        let resid: Vec<f64> = members.iter().map(|&i| x.data()[i] - c[i]).collect();
        let norm: Vec<f64> = members
            .iter()
            .map(|&i| (x.data()[i] - c[i]) / (1.0 - c[i]))
            .collect();
        let v = stats::variance(&norm);
        let q = (4.0 * v).min(1.0);
        let p = 0.5 * (1.0 - math::sqrt(1.0 - q));
        means.push(m);
        rates.push(-math::ln_1p(-p));
        raw_var.push(stats::variance(&resid));
    }
    if means.len() < 2 {
        return Err(undefined!(
            "poisson gain needs two populated intensity bins, got {}",
            means.len()
        ));
    }
    let smm: f64 = means.iter().map(|m| m * m).sum();
    let sml: f64 = means.iter().zip(&rates).map(|(m, l)| m * l).sum();
    let gain = if smm > 0.0 { sml / smm } else { 0.0 };
    let (raw_slope, raw_intercept) = ols_line(&means, &raw_var);
    Ok(PoissonGainFit {
        gain,
        raw_slope,
        raw_intercept,
        bins_used: means.len(),
    })
}

pub fn estimate_poisson_gain(x: &ImageTensor, clean: &ImageTensor) -> Result<f64> {
    fit_poisson_gain(x, clean).map(|f| f.gain)
}

fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = stats::mean(x);
    let my = stats::mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return (0.0, my);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Residual autocorrelation above which continuous noise counts as anisotropic.
pub const CORRELATED_NOISE_RHO: f64 = 0.4;

/// Runs every estimator against a clean reference and gates each on its
/// primitive's signature, so that the argmax names the dominant source.
///
/// Signatures: a lattice (quantization); changed pixels that are all
/// impulses, split between 0 and 1 (salt and pepper) or only saturating to
/// 1 (Poisson); otherwise a continuous residual that is white (Gaussian) or
/// spatially correlated (anisotropic). The clean component is whatever
/// strength the five sources leave unclaimed.
pub fn estimate_all(x: &ImageTensor, clean: &ImageTensor) -> Result<BaselineEstimate> {
    check_shapes(x, clean)?;
    let n = x.len() as f64;
    let mut diagnostics = BTreeMap::new();
    let mut changed = 0usize;
    let mut to_zero = 0usize;
    let mut to_one = 0usize;
    for (&v, &c) in x.data().iter().zip(clean.data()) {
        if v != c {
            changed += 1;
            if v == 0.0 {
                to_zero += 1;
            } else if v == 1.0 {
                to_one += 1;
            }
        }
    }
    let changed_frac = changed as f64 / n;
    let impulse_share = if changed > 0 {
        (to_zero + to_one) as f64 / changed as f64
    } else {
        0.0
    };
    let zero_share = if to_zero + to_one > 0 {
        to_zero as f64 / (to_zero + to_one) as f64
    } else {
        0.0
    };
    diagnostics.insert("changed_fraction".to_string(), changed_frac);
    diagnostics.insert("impulse_share".to_string(), impulse_share);
    diagnostics.insert("impulse_zero_share".to_string(), zero_share);

    let mut est = [0.0; NUM_COMPONENTS];
    if changed > 0 {
        let step = estimate_quant_step(x);
        diagnostics.insert("quant_step".to_string(), step);
        if step > 0.0 && changed_frac >= 0.5 {
            est[Primitive::Quantization.index()] = step;
        } else if impulse_share > 0.95 {
            if (0.2..=0.8).contains(&zero_share) {
                est[Primitive::SaltPepper.index()] = estimate_sp_fraction(x);
            } else if zero_share < 0.05 {
                match fit_poisson_gain(x, clean) {
                    Ok(fit) => {
                        diagnostics.insert("poisson_raw_slope".to_string(), fit.raw_slope);
                        diagnostics.insert("poisson_raw_intercept".to_string(), fit.raw_intercept);
                        est[Primitive::Poisson.index()] = fit.gain;
                    }
                    Err(_) => {
                        // Too few pixels per bin: fall back to the global saturation rate.
                        let m = stats::mean(clean.data()).max(1e-6);
                        est[Primitive::Poisson.index()] = -math::ln_1p(-changed_frac) / m;
                    }
                }
            }
        } else {
            let rho = lag1_autocorrelation(&x.sub(clean)?);
            diagnostics.insert("residual_lag1".to_string(), rho);
            if rho < CORRELATED_NOISE_RHO {
                est[Primitive::Gaussian.index()] = estimate_gaussian_sigma(x, Some(clean))?;
            } else {
                est[Primitive::Anisotropic.index()] = estimate_aniso_sigma(x, clean)?;
            }
        }
    }
    for v in est.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let claimed: f64 = est[..5].iter().sum();
    est[Primitive::Clean.index()] = (1.0 - claimed).clamp(0.0, 1.0);
    Ok(BaselineEstimate {
        strengths: NoiseStrengths::new(est)?,
        diagnostics,
    })
}
