//! Distribution comparisons over embeddings and 1-D densities.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, undefined};
use crate::linalg::symmetric_eigen;
use crate::math;
use crate::stats;
use crate::Result;

/// RBF bandwidth selection.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the pooled sample.
    #[default]
    Median,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_set(s: &[Vec<f64>], d: usize) -> Result<()> {
    if s.is_empty() {
        return Err(invalid!("sample is empty"));
    }
    if s.iter().any(|v| v.len() != d) {
        return Err(invalid!("embeddings must share dimension {}", d));
    }
    Ok(())
}

/// Median heuristic. Falls back to the smallest positive distance when more
/// than half the pairs coincide; `None` when every point is identical.
pub fn median_bandwidth(points: &[&[f64]]) -> Option<f64> {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            d.push(math::sqrt(sq_dist(points[i], points[j])));
        }
    }
    let m = stats::median(&d);
    if m > 0.0 {
        return Some(m);
    }
    d.into_iter().filter(|&v| v > 0.0).min_by(f64::total_cmp)
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> f64 {
    let mut total = 0.0;
    for u in a {
        let mut row = 0.0;
        for v in b {
            row += math::exp(-gamma * sq_dist(u, v));
        }
        total += row;
    }
    total / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) MMD² with `k(u, v) = exp(−‖u−v‖² / (2 bw²))`.
pub fn mmd_rbf(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64> {
    let d = a.first().map_or(0, Vec::len);
    check_set(a, d)?;
    check_set(b, d)?;
    let bw = match bandwidth {
        Bandwidth::Fixed(bw) if bw > 0.0 && bw.is_finite() => bw,
        Bandwidth::Fixed(bw) => return Err(invalid!("bandwidth must be positive, got {}", bw)),
        Bandwidth::Median => {
            let pooled: Vec<&[f64]> = a.iter().chain(b).map(Vec::as_slice).collect();
            match median_bandwidth(&pooled) {
                Some(bw) => bw,
                // Every point coincides, so the two distributions are equal.
                None => return Ok(0.0),
            }
        }
    };
    let gamma = 1.0 / (2.0 * bw * bw);
    let v = mean_kernel(a, a, gamma) + mean_kernel(b, b, gamma) - 2.0 * mean_kernel(a, b, gamma);
    Ok(v.max(0.0))
}

/// Silverman's rule `1.06 σ̂ n^(−1/5)`.
pub fn silverman_bandwidth(points: &[f64]) -> Result<f64> {
    if points.len() < 2 {
        return Err(invalid!("bandwidth selection needs at least two points"));
    }
    let s = stats::stddev(points);
    if !(s > 0.0) {
        return Err(undefined!("points have zero spread"));
    }
    Ok(1.06 * s * math::powf(points.len() as f64, -0.2))
}

/// Gaussian kernel density evaluated on `grid`. `None` selects Silverman's rule.
pub fn kde_1d(points: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(invalid!("density needs at least two points"));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(invalid!("bandwidth must be positive, got {}", h)),
        None => silverman_bandwidth(points)?,
    };
    let norm = 1.0 / (points.len() as f64 * h * math::sqrt(2.0 * core::f64::consts::PI));
    Ok(grid
        .iter()
        .map(|&g| {
            let s: f64 = points
                .iter()
                .map(|&p| math::exp(-0.5 * (g - p) * (g - p) / (h * h)))
                .sum();
            s * norm
        })
        .collect())
}

/// Projection onto the top two principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    pub coords: Vec<[f64; 2]>,
    /// Share of total variance on each axis.
    pub explained_ratio: [f64; 2],
    /// The set has rank below two; the second axis is all zeros.
    pub degenerate: bool,
}

/// Eigenvalues below this fraction of the total variance count as zero.
const RANK_TOL: f64 = 1e-12;

pub fn pca_2d(points: &[Vec<f64>]) -> Result<Pca2d> {
    if points.len() < 3 {
        return Err(invalid!("PCA needs at least three points"));
    }
    let d = points[0].len();
    check_set(points, d)?;
    if d < 2 {
        return Err(invalid!("PCA to two axes needs dimension >= 2"));
    }
    let n = points.len() as f64;
    let mut mu = vec![0.0; d];
    for p in points {
        for (m, v) in mu.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for p in points {
        for i in 0..d {
            let di = p[i] - mu[i];
            for j in i..d {
                cov[i * d + j] += di * (p[j] - mu[j]) / n;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i * d + j] = cov[j * d + i];
        }
    }
    let (vals, mut vecs) = symmetric_eigen(&cov, d);
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let mut ratio = [0.0; 2];
    let mut keep = [false; 2];
    for k in 0..2 {
        keep[k] = total > 0.0 && vals[k] > RANK_TOL * total;
        if keep[k] {
            ratio[k] = vals[k] / total;
        }
        // Sign convention: the largest-magnitude loading is positive.
        let big = vecs[k]
            .iter()
            .copied()
            .fold(0.0, |b: f64, v| if v.abs() > b.abs() { v } else { b });
        if big < 0.0 {
            vecs[k].iter_mut().for_each(|v| *v = -*v);
        }
    }
    let coords = points
        .iter()
        .map(|p| {
            let mut c = [0.0; 2];
            for k in 0..2 {
                if keep[k] {
                    c[k] = (0..d).map(|i| (p[i] - mu[i]) * vecs[k][i]).sum();
                }
            }
            c
        })
        .collect();
    Ok(Pca2d {
        coords,
        explained_ratio: ratio,
        degenerate: !keep[1],
    })
}
