//! Full-reference image quality: PSNR and SSIM.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::math;
use crate::tensor::ImageTensor;
use crate::Result;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quality {
    /// Peak 1.0; `+∞` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

pub fn psnr(x: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    check(x, reference)?;
    let mse = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * math::log10(mse)
    })
}

fn check(x: &ImageTensor, reference: &ImageTensor) -> Result<()> {
    if !x.same_shape(reference) {
        return Err(invalid!(
            "shape mismatch {:?} vs {:?}",
            x.shape(),
            reference.shape()
        ));
    }
    if x.is_empty() {
        return Err(invalid!("empty image"));
    }
    Ok(())
}

/// Valid-region separable filtering of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11×11 windows and all channels.
pub fn ssim(x: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    check(x, reference)?;
    let (c, h, w) = x.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid!(
            "SSIM needs images of at least {}×{}",
            SSIM_WINDOW,
            SSIM_WINDOW
        ));
    }
    let taps = gaussian_taps();
    // Dynamic range is 1.
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let a = x.channel(ch);
        let b = reference.channel(ch);
        let sq = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<f64>>();
        let mu_a = filter_valid(a, h, w, &taps);
        let mu_b = filter_valid(b, h, w, &taps);
        let aa = filter_valid(&sq(&|i| a[i] * a[i]), h, w, &taps);
        let bb = filter_valid(&sq(&|i| b[i] * b[i]), h, w, &taps);
        let ab = filter_valid(&sq(&|i| a[i] * b[i]), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        count += mu_a.len();
    }
    Ok(total / count as f64)
}

pub fn reference_quality(x: &ImageTensor, reference: &ImageTensor) -> Result<Quality> {
    let psnr_db = psnr(x, reference)?;
    let ssim = if psnr_db.is_infinite() {
        1.0
    } else {
        ssim(x, reference)?
    };
    Ok(Quality { psnr_db, ssim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::apply_gaussian;
    use crate::procedural::{texture, TextureKind};
    use crate::rng::RngStream;

    fn checker(n: usize) -> ImageTensor {
        ImageTensor::from_fn(
            1,
            n,
            n,
            |_, y, x| if (y / 4 + x / 4) % 2 == 0 { 0.8 } else { 0.2 },
        )
    }

    /// Direct per-window evaluation with a 2-D weight table.
    fn naive_ssim(x: &ImageTensor, r: &ImageTensor) -> f64 {
        let t = gaussian_taps();
        let (c, h, w) = x.shape();
        let (c1, c2) = (0.0001, 0.0009);
        let mut total = 0.0;
        let mut n = 0.0;
        for ch in 0..c {
            for y0 in 0..=(h - 11) {
                for x0 in 0..=(w - 11) {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            ma += t[i] * t[j] * x.get(ch, y0 + i, x0 + j);
                            mb += t[i] * t[j] * r.get(ch, y0 + i, x0 + j);
                        }
                    }
                    let (mut va, mut vb, mut cv) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let da = x.get(ch, y0 + i, x0 + j) - ma;
                            let db = r.get(ch, y0 + i, x0 + j) - mb;
                            va += t[i] * t[j] * da * da;
                            vb += t[i] * t[j] * db * db;
                            cv += t[i] * t[j] * da * db;
                        }
                    }
                    total += ((2.0 * ma * mb + c1) * (2.0 * cv + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    n += 1.0;
                }
            }
        }
        total / n
    }

    #[test]
    fn identical_images() {
        let x = checker(16);
        let q = reference_quality(&x, &x).unwrap();
        assert_eq!(
            q,
            Quality {
                psnr_db: f64::INFINITY,
                ssim: 1.0
            }
        );
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_formula() {
        let a = ImageTensor::filled(1, 4, 4, 0.5);
        let b = ImageTensor::filled(1, 4, 4, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &ImageTensor::filled(1, 4, 5, 0.5)).is_err());
    }

    #[test]
    fn ssim_matches_window_loop() {
        let clean = checker(24);
        let noisy = apply_gaussian(&clean, 0.1, &RngStream::new(60)).unwrap();
        let fast = ssim(&noisy, &clean).unwrap();
        assert!((fast - naive_ssim(&noisy, &clean)).abs() < 1e-6);
        assert!(fast < 0.95);

        let tex = texture(TextureKind::Blobs, 3, 13, 17, &RngStream::new(61));
        let other = texture(TextureKind::Stripes, 3, 13, 17, &RngStream::new(62));
        assert!((ssim(&tex, &other).unwrap() - naive_ssim(&tex, &other)).abs() < 1e-6);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = checker(8);
        assert!(ssim(&x, &x).is_err());
    }
}
