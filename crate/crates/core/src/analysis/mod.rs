//! Statistics for evaluating noise estimates and explaining them.

mod depth;
mod embed;
mod metrics;
mod quality;
mod shapley;

pub use depth::{depth_two_arm, DepthReport};
pub use embed::{kde_1d, median_bandwidth, mmd_rbf, pca_2d, silverman_bandwidth, Bandwidth, Pca2d};
pub use metrics::{
    classification_report, cohens_f2, correlation_matrix, fit_residual_gaussian, linear_fit,
    paired_ttest, regression_metrics, single_model_f2, ClassificationReport, CorrelationMatrix,
    EffectClass, EffectSize, RegressionFit, RegressionMetrics, ResidualFit, TTest,
};
pub use quality::{
    gaussian_taps, psnr, reference_quality, ssim, Quality, SSIM_K1, SSIM_K2, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use shapley::{
    attribution_report, shapley_exact, surrogate_fit, AttributionReport, ShapleyRow, Surrogate,
    MAX_EXACT_FEATURES,
};
