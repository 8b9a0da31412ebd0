//! Summary statistics and the special functions behind the t-test.

use alloc::vec::Vec;

use crate::error::{invalid, undefined};
use crate::math;
use crate::Result;

/// Location, spread and robust spread of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); zero for one point.
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    /// Median absolute deviation from the median (unscaled).
    pub mad: f64,
}

pub fn summary_stats(xs: &[f64]) -> Result<Summary> {
    if xs.is_empty() {
        return Err(invalid!("summary of empty sample"));
    }
    let mean = mean(xs);
    let stddev = if xs.len() > 1 {
        math::sqrt(sum_sq_dev(xs, mean) / (xs.len() - 1) as f64)
    } else {
        0.0
    };
    let (min, max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let median = median(xs);
    let dev: Vec<f64> = xs.iter().map(|v| (v - median).abs()).collect();
    let mad = self::median(&dev);
    Ok(Summary {
        mean,
        stddev,
        min,
        max,
        median,
        mad,
    })
}

/// Arithmetic mean; NaN on empty input.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sum_sq_dev(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Unbiased sample variance; zero when fewer than two points.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    sum_sq_dev(xs, mean(xs)) / (xs.len() - 1) as f64
}

pub fn stddev(xs: &[f64]) -> f64 {
    math::sqrt(variance(xs))
}

/// Median (mean of the two central order statistics for even length).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Normal-consistent MAD scale: `1.4826 · median(|x − median(x)|)`.
pub fn robust_sigma(xs: &[f64]) -> f64 {
    let m = median(xs);
    let dev: Vec<f64> = xs.iter().map(|v| (v - m).abs()).collect();
    MAD_TO_SIGMA * median(&dev)
}

pub const MAD_TO_SIGMA: f64 = 1.4826;

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid!("length mismatch {} vs {}", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(undefined!("correlation needs at least two points"));
    }
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(undefined!("correlation with a zero-variance column"));
    }
    Ok((sab / math::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + math::erf(x / core::f64::consts::SQRT_2))
}

/// Regularized incomplete beta `I_x(a, b)`, continued fraction (Lentz).
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = math::ln_gamma(a + b) - math::ln_gamma(a) - math::ln_gamma(b)
        + a * math::ln(x)
        + b * math::ln_1p(-x);
    let front = math::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Student-t CDF with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_beta(x, 0.5 * df, 0.5);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value `P(|T| ≥ |t|)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let x = df / (df + t * t);
    regularized_beta(x, 0.5 * df, 0.5).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use std::vec::Vec;

    #[test]
    fn constant_sample() {
        let s = summary_stats(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.stddev, 0.0);
        assert_eq!(s.mad, 0.0);
    }

    #[test]
    fn two_points() {
        let s = summary_stats(&[0.0, 1.0]).unwrap();
        assert_eq!(s.mean, 0.5);
        assert!((s.stddev - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(s.median, 0.5);
    }

    #[test]
    fn empty_is_invalid() {
        assert!(matches!(
            summary_stats(&[]),
            Err(crate::Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn standard_normal_sample_within_clt_bounds() {
        let mut d = RngStream::new(2024).draws();
        let xs: Vec<f64> = (0..100_000).map(|_| d.standard_normal()).collect();
        let s = summary_stats(&xs).unwrap();
        assert!(s.mean.abs() < 0.02, "{}", s.mean);
        assert!((0.98..=1.02).contains(&s.stddev), "{}", s.stddev);
        // MAD of a standard normal is 0.6745.
        assert!((s.mad * MAD_TO_SIGMA - 1.0).abs() < 0.03);
    }

    #[test]
    fn median_and_mad_small_cases() {
        let s = summary_stats(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!(s.median, 2.5);
        // |x - 2.5| = 0.5, 1.5, 0.5, 7.5 -> median 1.0
        assert_eq!(s.mad, 1.0);
        assert_eq!((s.min, s.max), (1.0, 10.0));
    }

    #[test]
    fn t_cdf_reference_values() {
        // df = 1 is Cauchy: F(t) = 1/2 + atan(t)/pi.
        for &t in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let exact = 0.5 + libm::atan(t) / core::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - exact).abs() < 1e-12, "t={t}");
        }
        // df = 2: F(t) = 1/2 + t / (2 sqrt(2 + t^2)).
        for &t in &[-2.0f64, 0.3, 1.5] {
            let exact = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((student_t_cdf(t, 2.0) - exact).abs() < 1e-12, "t={t}");
        }
        assert!((student_t_two_sided_p(0.0, 5.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn incomplete_beta_symmetry() {
        for &(x, a, b) in &[(0.2, 2.0, 3.0), (0.7, 0.5, 4.5), (0.5, 10.0, 10.0)] {
            let lhs = regularized_beta(x, a, b);
            let rhs = 1.0 - regularized_beta(1.0 - x, b, a);
            assert!((lhs - rhs).abs() < 1e-13);
        }
        // I_x(1, 1) = x
        assert!((regularized_beta(0.37, 1.0, 1.0) - 0.37).abs() < 1e-14);
    }
}
