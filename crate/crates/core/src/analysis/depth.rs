//! Depth-gradient comparison between a control arm and an intervention arm.
//!
//! Each arm gets its own `value = slope·depth + intercept` fit. The slope
//! difference is divided by `√(SE₁² + SE₂²)` and referred to a Student t
//! with `n₁ + n₂ − 4` degrees of freedom, and the arm's contribution is sized by
//! Cohen's f² of `value ~ depth + arm + depth×arm` over `value ~ depth`.

use alloc::vec::Vec;

use super::metrics::{cohens_f2, linear_fit, EffectSize, RegressionFit};
use crate::error::invalid;
use crate::linalg::least_squares;
use crate::math;
use crate::stats;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthReport {
    pub control: RegressionFit,
    pub intervention: RegressionFit,
    /// `intervention.slope − control.slope`.
    pub slope_difference: f64,
    pub difference_se: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub full_r2: f64,
    pub reduced_r2: f64,
    pub effect: EffectSize,
}

fn r_squared(design: &[f64], cols: usize, y: &[f64]) -> Result<f64> {
    let n = y.len();
    let sol = least_squares(design, n, cols, y)?;
    let my = stats::mean(y);
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (i, t) in y.iter().enumerate() {
        let fit: f64 = (0..cols)
            .map(|c| design[i * cols + c] * sol.coefficients[c])
            .sum();
        ss_res += (t - fit) * (t - fit);
        ss_tot += (t - my) * (t - my);
    }
    Ok(if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        0.0
    })
}

/// `intervention[i]` marks sample `i` as belonging to the intervention arm.
pub fn depth_two_arm(depth: &[f64], value: &[f64], intervention: &[bool]) -> Result<DepthReport> {
    let n = depth.len();
    if value.len() != n || intervention.len() != n {
        return Err(invalid!(
            "depth, value and arm labels must have equal lengths"
        ));
    }
    let split = |arm: bool| -> (Vec<f64>, Vec<f64>) {
        (0..n)
            .filter(|&i| intervention[i] == arm)
            .map(|i| (depth[i], value[i]))
            .unzip()
    };
    let (xc, yc) = split(false);
    let (xi, yi) = split(true);
    if xc.len() < 3 || xi.len() < 3 {
        return Err(invalid!(
            "each arm needs at least three samples, got {} and {}",
            xc.len(),
            xi.len()
        ));
    }
    let control = linear_fit(&xc, &yc)?;
    let intervention_fit = linear_fit(&xi, &yi)?;
    let slope_difference = intervention_fit.slope - control.slope;
    let difference_se = math::sqrt(
        control.slope_se * control.slope_se + intervention_fit.slope_se * intervention_fit.slope_se,
    );
    let df = (n - 4) as f64;
    let t = if difference_se > 0.0 {
        slope_difference / difference_se
    } else if slope_difference == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(slope_difference)
    };
    let p_two_sided = if t.is_infinite() {
        0.0
    } else {
        stats::student_t_two_sided_p(t, df)
    };

    let mut full = Vec::with_capacity(n * 4);
    let mut reduced = Vec::with_capacity(n * 2);
    for i in 0..n {
        let g = if intervention[i] { 1.0 } else { 0.0 };
        full.extend_from_slice(&[1.0, depth[i], g, g * depth[i]]);
        reduced.extend_from_slice(&[1.0, depth[i]]);
    }
    let full_r2 = r_squared(&full, 4, value)?;
    // The reduced model is nested, so its R² cannot exceed the full one
    // beyond rounding.
    let reduced_r2 = r_squared(&reduced, 2, value)?.min(full_r2);
    let effect = cohens_f2(full_r2, reduced_r2)?;
    Ok(DepthReport {
        control,
        intervention: intervention_fit,
        slope_difference,
        difference_se,
        t,
        df,
        p_two_sided,
        full_r2,
        reduced_r2,
        effect,
    })
}
