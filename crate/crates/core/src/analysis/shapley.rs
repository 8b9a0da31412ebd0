//! Exact interventional Shapley attribution and a polynomial surrogate to explain.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::linalg::least_squares;
use crate::stats;
use crate::Result;

/// Coalitions are enumerated exhaustively, so the feature count is capped.
pub const MAX_EXACT_FEATURES: usize = 12;

/// Attribution for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyRow {
    pub values: Vec<f64>,
    /// `v(∅)`: the mean model output over the background.
    pub base: f64,
    /// `v(N) = f(x)`.
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionReport {
    /// `instances × features`.
    pub values: Vec<Vec<f64>>,
    pub base: f64,
    /// Mean absolute attribution per feature.
    pub mean_abs: Vec<f64>,
}

fn check_background(k: usize, background: &[Vec<f64>]) -> Result<()> {
    if k > MAX_EXACT_FEATURES {
        return Err(invalid!(
            "exact Shapley supports at most {} features, got {}",
            MAX_EXACT_FEATURES,
            k
        ));
    }
    if background.is_empty() {
        return Err(invalid!("background set is empty"));
    }
    if background.iter().any(|b| b.len() != k) {
        return Err(invalid!("background rows must have {} features", k));
    }
    Ok(())
}

/// `v(S)` for every coalition bitmask `S`.
fn coalition_values<F: Fn(&[f64]) -> f64>(
    model: &F,
    instance: &[f64],
    background: &[Vec<f64>],
) -> Vec<f64> {
    let k = instance.len();
    let mut z = vec![0.0; k];
    (0..1usize << k)
        .map(|mask| {
            let mut s = 0.0;
            for b in background {
                for j in 0..k {
                    z[j] = if mask >> j & 1 == 1 {
                        instance[j]
                    } else {
                        b[j]
                    };
                }
                s += model(&z);
            }
            s / background.len() as f64
        })
        .collect()
}

/// Interventional Shapley values of `model` at `instance` by full enumeration.
pub fn shapley_exact<F: Fn(&[f64]) -> f64>(
    model: &F,
    instance: &[f64],
    background: &[Vec<f64>],
) -> Result<ShapleyRow> {
    let k = instance.len();
    check_background(k, background)?;
    let v = coalition_values(model, instance, background);
    // weight[s] = s!(k−s−1)!/k!
    let mut fact = vec![1.0; k + 1];
    for i in 1..=k {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..k)
        .map(|s| fact[s] * fact[k - s - 1] / fact[k])
        .collect();
    let mut values = vec![0.0; k];
    for (j, phi) in values.iter_mut().enumerate() {
        let bit = 1usize << j;
        for mask in 0..(1usize << k) {
            if mask & bit == 0 {
                *phi += weight[mask.count_ones() as usize] * (v[mask | bit] - v[mask]);
            }
        }
    }
    Ok(ShapleyRow {
        values,
        base: v[0],
        prediction: v[(1 << k) - 1],
    })
}

/// Shapley rows for every instance plus per-feature mean absolute values.
pub fn attribution_report<F: Fn(&[f64]) -> f64>(
    model: &F,
    instances: &[Vec<f64>],
    background: &[Vec<f64>],
) -> Result<AttributionReport> {
    let k = background.first().map_or(0, Vec::len);
    check_background(k, background)?;
    let mut values = Vec::with_capacity(instances.len());
    for x in instances {
        if x.len() != k {
            return Err(invalid!(
                "instance has {} features, expected {}",
                x.len(),
                k
            ));
        }
        values.push(shapley_exact(model, x, background)?.values);
    }
    let base = background.iter().map(|b| model(b)).sum::<f64>() / background.len() as f64;
    let mut mean_abs = vec![0.0; k];
    for row in &values {
        for (m, v) in mean_abs.iter_mut().zip(row) {
            *m += v.abs();
        }
    }
    if !values.is_empty() {
        mean_abs.iter_mut().for_each(|m| *m /= values.len() as f64);
    }
    Ok(AttributionReport {
        values,
        base,
        mean_abs,
    })
}

/// Degree-2 polynomial least squares on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Intercept, linear terms, then `z_i z_j` for `i ≤ j` in row-major order.
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    /// The design was rank deficient and a ridge penalty was used.
    pub ridge: bool,
}

fn expand(z: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(z);
    for i in 0..z.len() {
        for j in i..z.len() {
            out.push(z[i] * z[j]);
        }
    }
}

impl Surrogate {
    pub fn features(&self) -> usize {
        self.means.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let mut row = Vec::with_capacity(self.coefficients.len());
        expand(&z, &mut row);
        row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

pub fn surrogate_fit(features: &[Vec<f64>], target: &[f64]) -> Result<Surrogate> {
    let n = features.len();
    let k = features.first().map_or(0, Vec::len);
    if n == 0 || target.len() != n || features.iter().any(|f| f.len() != k) {
        return Err(invalid!(
            "surrogate needs a rectangular feature matrix matching the target"
        ));
    }
    if n <= k {
        return Err(invalid!(
            "surrogate needs more rows ({}) than features ({})",
            n,
            k
        ));
    }
    let mut means = vec![0.0; k];
    let mut scales = vec![1.0; k];
    for j in 0..k {
        let col: Vec<f64> = features.iter().map(|f| f[j]).collect();
        means[j] = stats::mean(&col);
        let s = stats::stddev(&col);
        // Constant columns stay unscaled; the ridge fallback absorbs them.
        if s > 0.0 {
            scales[j] = s;
        }
    }
    let cols = 1 + k + k * (k + 1) / 2;
    let mut design = Vec::with_capacity(n * cols);
    let mut row = Vec::with_capacity(cols);
    for f in features {
        let z: Vec<f64> = f
            .iter()
            .zip(&means)
            .zip(&scales)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        expand(&z, &mut row);
        design.extend_from_slice(&row);
    }
    let sol = least_squares(&design, n, cols, target)?;
    let mut s = Surrogate {
        means,
        scales,
        coefficients: sol.coefficients,
        r_squared: 0.0,
        ridge: sol.ridge,
    };
    let mt = stats::mean(target);
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (f, t) in features.iter().zip(target) {
        let (r, d) = (s.predict(f) - t, t - mt);
        ss_res += r * r;
        ss_tot += d * d;
    }
    s.r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    if !s.r_squared.is_finite() || s.coefficients.iter().any(|c| !c.is_finite()) {
        return Err(crate::Error::NumericFailure("surrogate fit is not finite".into()));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn matrix(n: usize, k: usize, s: &RngStream) -> Vec<Vec<f64>> {
        let mut d = s.draws();
        (0..n)
            .map(|_| (0..k).map(|_| d.standard_normal()).collect())
            .collect()
    }

    #[test]
    fn linear_model_closed_form_and_efficiency() {
        let s = RngStream::new(70);
        let w = [0.5, -1.2, 2.0, 0.0, 0.3];
        let f = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.7;
        let bg = matrix(30, 5, &s.derive("bg", 0));
        for (i, x) in matrix(20, 5, &s.derive("x", 0)).iter().enumerate() {
            let r = shapley_exact(&f, x, &bg).unwrap();
            for j in 0..5 {
                let mb: f64 = bg.iter().map(|b| b[j]).sum::<f64>() / 30.0;
                assert!(
                    (r.values[j] - w[j] * (x[j] - mb)).abs() < 1e-9,
                    "instance {} feature {}",
                    i,
                    j
                );
            }
            assert_eq!(r.values[3], 0.0);
            let total: f64 = r.values.iter().sum();
            assert!((r.base + total - f(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetry_and_dummy_for_nonlinear_model() {
        let f = |x: &[f64]| x[0] * x[1] + libm::sin(x[0] + x[1]);
        let bg = vec![
            vec![0.0, 0.0, 5.0],
            vec![1.0, 1.0, -2.0],
            vec![0.3, 0.3, 1.0],
        ];
        let r = shapley_exact(&f, &[0.8, 0.8, 9.0], &bg).unwrap();
        assert!((r.values[0] - r.values[1]).abs() < 1e-15);
        assert_eq!(r.values[2], 0.0);
        assert!((r.base + r.values.iter().sum::<f64>() - r.prediction).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let f = |x: &[f64]| x[0];
        assert!(shapley_exact(&f, &[1.0], &[]).is_err());
        assert!(shapley_exact(&f, &[0.0; 13], &[vec![0.0; 13]]).is_err());
        assert!(shapley_exact(&f, &[1.0, 2.0], &[vec![0.0]]).is_err());
    }

    #[test]
    fn report_mean_abs() {
        let f = |x: &[f64]| 2.0 * x[0] - x[1];
        let bg = vec![vec![0.0, 0.0]];
        let inst = vec![vec![1.0, 1.0], vec![-1.0, 3.0]];
        let r = attribution_report(&f, &inst, &bg).unwrap();
        assert_eq!(r.values, vec![vec![2.0, -1.0], vec![-2.0, -3.0]]);
        assert_eq!(r.mean_abs, vec![2.0, 2.0]);
        assert_eq!(r.base, 0.0);
    }

    #[test]
    fn surrogate_reproduces_linear_target() {
        let s = RngStream::new(71);
        let x = matrix(60, 4, &s);
        let y: Vec<f64> = x
            .iter()
            .map(|r| 1.0 + 2.0 * r[0] - 0.5 * r[2] + 0.25 * r[3])
            .collect();
        let m = surrogate_fit(&x, &y).unwrap();
        assert!(!m.ridge);
        assert!((m.r_squared - 1.0).abs() < 1e-12);
        for (r, t) in x.iter().zip(&y) {
            assert!((m.predict(r) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn surrogate_captures_interaction() {
        let s = RngStream::new(72);
        let x = matrix(200, 3, &s);
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1]).collect();
        assert!(surrogate_fit(&x, &y).unwrap().r_squared > 0.99);
    }

    #[test]
    fn surrogate_on_noise_has_low_r2() {
        let s = RngStream::new(73);
        let x = matrix(1000, 5, &s.derive("x", 0));
        let mut d = s.derive("y", 0).draws();
        let y: Vec<f64> = (0..1000).map(|_| d.standard_normal()).collect();
        assert!(surrogate_fit(&x, &y).unwrap().r_squared < 0.1);
    }

    #[test]
    fn surrogate_flags_rank_deficiency() {
        let s = RngStream::new(74);
        let mut x = matrix(40, 3, &s);
        for r in &mut x {
            r[2] = 2.0 * r[0];
        }
        let y: Vec<f64> = x.iter().map(|r| r[0] + r[1]).collect();
        let m = surrogate_fit(&x, &y).unwrap();
        assert!(m.ridge);
        assert!(m.r_squared > 0.999);
        assert!(surrogate_fit(&x[..3], &y[..3]).is_err());
    }

    #[test]
    fn surrogate_attribution_is_efficient() {
        let s = RngStream::new(75);
        let x = matrix(80, 5, &s);
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1] + r[2] * r[2] - r[4]).collect();
        let m = surrogate_fit(&x, &y).unwrap();
        let f = |v: &[f64]| m.predict(v);
        let r = attribution_report(&f, &x[..10], &x[10..]).unwrap();
        for (row, inst) in r.values.iter().zip(&x[..10]) {
            assert!((r.base + row.iter().sum::<f64>() - m.predict(inst)).abs() < 1e-9);
        }
    }
}
