use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::engine::{NoiseStrengths, NUM_COMPONENTS};
use crate::error::{invalid, undefined};
use crate::math;
use crate::stats::{self, mean, pearson};
use crate::Result;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(invalid!(
            "need equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub r_squared: f64,
    /// `None` when the predictions are constant.
    pub pearson_r: Option<f64>,
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    let mt = mean(truth);
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        ss_res += (p - t) * (p - t);
        ss_tot += (t - mt) * (t - mt);
    }
    if !(ss_tot > 0.0) {
        return Err(undefined!("R² needs truth with nonzero variance"));
    }
    let pearson_r = match pearson(pred, truth) {
        Ok(r) => Some(r),
        Err(crate::Error::UndefinedStatistic(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RegressionMetrics {
        rmse: math::sqrt(ss_res / n),
        r_squared: 1.0 - ss_res / ss_tot,
        pearson_r,
    })
}

/// Gaussian summary of prediction residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualFit {
    pub mu: f64,
    pub sigma: f64,
}

pub fn fit_residual_gaussian(pred: &[f64], truth: &[f64]) -> Result<ResidualFit> {
    check_pair(pred, truth)?;
    let r: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    Ok(ResidualFit {
        mu: mean(&r),
        sigma: stats::stddev(&r),
    })
}

/// Ordinary least squares `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
    /// `√(SS_res / (n − 2))`; zero for two points.
    pub residual_std: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    check_pair(x, y)?;
    let n = x.len();
    if n < 2 {
        return Err(invalid!("linear fit needs at least two points"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(undefined!(
            "linear fit needs a regressor with nonzero variance"
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0f64 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let residual_std = if n > 2 {
        math::sqrt(ss_res / (n - 2) as f64)
    } else {
        0.0
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        n,
        residual_std,
        slope_se: residual_std / math::sqrt(sxx),
        intercept_se: residual_std * math::sqrt(1.0 / n as f64 + mx * mx / sxx),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectClass {
    Small,
    Medium,
    Large,
}

impl EffectClass {
    pub const MEDIUM_AT: f64 = 0.15;
    pub const LARGE_AT: f64 = 0.35;

    /// Lower bounds are inclusive: 0.35 is Large.
    pub fn classify(f_squared: f64) -> Self {
        if f_squared >= Self::LARGE_AT {
            EffectClass::Large
        } else if f_squared >= Self::MEDIUM_AT {
            EffectClass::Medium
        } else {
            EffectClass::Small
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EffectClass::Small => "small",
            EffectClass::Medium => "medium",
            EffectClass::Large => "large",
        }
    }
}

impl fmt::Display for EffectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectSize {
    pub f_squared: f64,
    pub class: EffectClass,
}

impl EffectSize {
    fn from_f2(f_squared: f64) -> Self {
        Self {
            f_squared,
            class: EffectClass::classify(f_squared),
        }
    }
}

/// Cohen's f² of a full model over a nested reduced one.
pub fn cohens_f2(full_r2: f64, reduced_r2: f64) -> Result<EffectSize> {
    if !(full_r2 < 1.0) {
        return Err(invalid!("full R² must be below 1, got {}", full_r2));
    }
    if !(reduced_r2 >= 0.0 && reduced_r2 <= full_r2) {
        return Err(invalid!(
            "need 0 <= reduced R² ({}) <= full R² ({})",
            reduced_r2,
            full_r2
        ));
    }
    Ok(EffectSize::from_f2(
        (full_r2 - reduced_r2) / (1.0 - full_r2),
    ))
}

/// Single-model effect size `R² / (1 − R²)`.
pub fn single_model_f2(r2: f64) -> Result<EffectSize> {
    cohens_f2(r2, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p_two_sided: f64,
    pub df: f64,
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    check_pair(a, b)?;
    if a.len() < 2 {
        return Err(invalid!("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sd = stats::stddev(&d);
    if !(sd > 0.0) {
        return Err(undefined!("paired differences have zero variance"));
    }
    let n = d.len() as f64;
    let t = mean(&d) / (sd / math::sqrt(n));
    let df = n - 1.0;
    Ok(TTest {
        t,
        p_two_sided: stats::student_t_two_sided_p(t, df),
        df,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub n: usize,
    /// Fraction of instances whose argmax agrees; ties go to the earliest component.
    pub dominant_accuracy: f64,
    /// `(threshold, agreement)`: fraction of (instance, component) pairs on
    /// the same side of the threshold.
    pub threshold_accuracy: Vec<(f64, f64)>,
}

pub fn classification_report(
    pred: &[NoiseStrengths],
    truth: &[NoiseStrengths],
    thresholds: &[f64],
) -> Result<ClassificationReport> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(invalid!(
            "need equal non-empty sets, got {} and {}",
            pred.len(),
            truth.len()
        ));
    }
    let n = pred.len();
    let hits = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| p.dominant() == t.dominant())
        .count();
    let threshold_accuracy = thresholds
        .iter()
        .map(|&th| {
            let agree: usize = pred
                .iter()
                .zip(truth)
                .map(|(p, t)| {
                    (0..NUM_COMPONENTS)
                        .filter(|&c| (p.as_array()[c] >= th) == (t.as_array()[c] >= th))
                        .count()
                })
                .sum();
            (th, agree as f64 / (n * NUM_COMPONENTS) as f64)
        })
        .collect();
    Ok(ClassificationReport {
        n,
        dominant_accuracy: hits as f64 / n as f64,
        threshold_accuracy,
    })
}

/// Pairwise Pearson correlations; entries touching a constant column are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn correlation_matrix(columns: &[(String, Vec<f64>)]) -> Result<CorrelationMatrix> {
    let k = columns.len();
    if let Some((_, first)) = columns.first() {
        if first.len() < 2 || columns.iter().any(|(_, c)| c.len() != first.len()) {
            return Err(invalid!("columns need a common length of at least two"));
        }
    }
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = match pearson(&columns[i].1, &columns[j].1) {
                Ok(r) => Some(if i == j { 1.0 } else { r }),
                Err(crate::Error::UndefinedStatistic(_)) => None,
                Err(e) => return Err(e),
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: columns.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}
