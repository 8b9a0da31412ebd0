//! Small dense linear algebra: least squares and symmetric eigendecomposition.
//!
//! Matrices are row-major `Vec<f64>` with explicit dimensions; sizes here
//! are tens of columns at most.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::math;
use crate::Result;

/// Outcome of a least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub coefficients: Vec<f64>,
    /// Numerical rank found by the QR pivots.
    pub rank: usize,
    /// True when the design was rank deficient and a ridge penalty was used.
    pub ridge: bool,
}

/// Relative pivot size below which a column is treated as dependent.
const RANK_TOL: f64 = 1e-10;

/// Ridge penalty used when the design is rank deficient.
pub const FALLBACK_RIDGE: f64 = 1e-8;

/// Minimizes `‖A β − y‖²` for a `rows × cols` design `a`.
///
/// Householder QR; if the design is rank deficient the normal equations are
/// solved with a small ridge penalty instead and the result is flagged.
pub fn least_squares(a: &[f64], rows: usize, cols: usize, y: &[f64]) -> Result<LstsqSolution> {
    if a.len() != rows * cols || y.len() != rows {
        return Err(invalid!("least squares: inconsistent dimensions"));
    }
    if cols == 0 {
        return Ok(LstsqSolution {
            coefficients: Vec::new(),
            rank: 0,
            ridge: false,
        });
    }
    let mut r = a.to_vec();
    let mut qty = y.to_vec();
    let mut diag_scale: f64 = 0.0;
    for j in 0..cols {
        let col_norm = (0..rows)
            .map(|i| a[i * cols + j] * a[i * cols + j])
            .sum::<f64>();
        diag_scale = diag_scale.max(math::sqrt(col_norm));
    }
    let steps = cols.min(rows);
    let mut rank = 0;
    for k in 0..steps {
        let norm = math::sqrt(
            (k..rows)
                .map(|i| r[i * cols + k] * r[i * cols + k])
                .sum::<f64>(),
        );
        if norm <= RANK_TOL * diag_scale.max(f64::MIN_POSITIVE) {
            continue;
        }
        let alpha = if r[k * cols + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..rows).map(|i| r[i * cols + k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            rank += 1;
            continue;
        }
        for j in k..cols {
            let dot: f64 = (k..rows).map(|i| v[i - k] * r[i * cols + j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..rows {
                r[i * cols + j] -= f * v[i - k];
            }
        }
        let dot: f64 = (k..rows).map(|i| v[i - k] * qty[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..rows {
            qty[i] -= f * v[i - k];
        }
        rank += 1;
    }
    let full_rank = rank == cols
        && (0..cols).all(|k| r[k * cols + k].abs() > RANK_TOL * diag_scale.max(f64::MIN_POSITIVE));
    if !full_rank {
        let coefficients = ridge(a, rows, cols, y, FALLBACK_RIDGE)?;
        return Ok(LstsqSolution {
            coefficients,
            rank,
            ridge: true,
        });
    }
    let mut beta = vec![0.0; cols];
    for k in (0..cols).rev() {
        let mut acc = qty[k];
        for j in (k + 1)..cols {
            acc -= r[k * cols + j] * beta[j];
        }
        beta[k] = acc / r[k * cols + k];
    }
    Ok(LstsqSolution {
        coefficients: beta,
        rank,
        ridge: false,
    })
}

/// Ridge regression `(AᵀA + λI)⁻¹ Aᵀy` via Cholesky.
pub fn ridge(a: &[f64], rows: usize, cols: usize, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let mut ata = vec![0.0; cols * cols];
    let mut aty = vec![0.0; cols];
    for i in 0..rows {
        let row = &a[i * cols..(i + 1) * cols];
        for p in 0..cols {
            aty[p] += row[p] * y[i];
            for q in p..cols {
                ata[p * cols + q] += row[p] * row[q];
            }
        }
    }
    for p in 0..cols {
        for q in 0..p {
            ata[p * cols + q] = ata[q * cols + p];
        }
        ata[p * cols + p] += lambda;
    }
    cholesky_solve(&ata, cols, &aty)
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn cholesky_solve(m: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(invalid!("matrix is not positive definite"));
                }
                l[i * n + i] = math::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}

/// Eigenvalues (descending) and matching unit eigenvectors of a symmetric
/// `n × n` matrix, by cyclic Jacobi rotations.
pub fn symmetric_eigen(m: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = m.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_recovers_coefficients() {
        // y = 1 + 2 x0 - 3 x1
        let rows = 6;
        let xs = [
            (0.0, 1.0),
            (1.0, 0.5),
            (2.0, -1.0),
            (3.0, 2.0),
            (-1.0, 0.0),
            (0.5, 0.25),
        ];
        let mut a = Vec::new();
        let mut y = Vec::new();
        for &(x0, x1) in &xs {
            a.extend_from_slice(&[1.0, x0, x1]);
            y.push(1.0 + 2.0 * x0 - 3.0 * x1);
        }
        let sol = least_squares(&a, rows, 3, &y).unwrap();
        assert!(!sol.ridge);
        for (b, e) in sol.coefficients.iter().zip([1.0, 2.0, -3.0]) {
            assert!((b - e).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_column_falls_back_to_ridge() {
        let a = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let y = [2.0, 4.0, 6.0];
        let sol = least_squares(&a, 3, 2, &y).unwrap();
        assert!(sol.ridge);
        assert!((sol.coefficients[0] + sol.coefficients[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn jacobi_diagonalizes() {
        let m = [4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0];
        let (vals, vecs) = symmetric_eigen(&m, 3);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for (lam, v) in vals.iter().zip(&vecs) {
            for i in 0..3 {
                let mv: f64 = (0..3).map(|k| m[i * 3 + k] * v[k]).sum();
                assert!((mv - lam * v[i]).abs() < 1e-12);
            }
        }
        let trace: f64 = vals.iter().sum();
        assert!((trace - 8.0).abs() < 1e-12);
    }
}
