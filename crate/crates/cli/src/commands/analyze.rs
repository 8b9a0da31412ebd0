//! Analysis reports over a predictions CSV and its manifest.
//!
//! Analyses: `metrics` (RMSE, R², Pearson r, residual μ/σ against recorded
//! strengths), `classification` (dominant component, threshold agreement),
//! `correlation` (predicted components and numeric metadata), `shapley`
//! (mean |SHAP| of numeric metadata on each predicted component through a
//! quadratic surrogate, plus Sankey triples) and `depth` (two-arm depth
//! regressions). An analysis whose inputs are missing leaves a row whose
//! note starts with `skipped:` instead of failing the run.

use std::collections::HashMap;
use std::path::Path;

use anyhow::Result;
use noisomics_core::analysis::{
    attribution_report, classification_report, correlation_matrix, depth_two_arm, fit_residual_gaussian,
    regression_metrics, surrogate_fit, EffectClass,
};
use noisomics_core::engine::NUM_COMPONENTS;
use noisomics_core::NoiseStrengths;
use serde::Serialize;

use super::estimate::{read_predictions, Prediction};
use super::{component_names, ensure_dir, invalid_arg};
use crate::config::Config;
use crate::manifest::{Manifest, Metadata, Record};
use crate::report::{Provenance, Report, Row};

pub const REPORT_STEM: &str = "report";
pub const SANKEY_NAME: &str = "sankey.csv";
pub const ANALYSES: [&str; 5] = ["metrics", "classification", "correlation", "shapley", "depth"];

/// One Sankey edge: metadata feature to noise component, weighted by mean |SHAP|.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SankeyFlow {
    pub source_feature: String,
    pub target_noise: String,
    pub mean_abs_shap: f64,
}

#[derive(Debug)]
pub struct AnalyzeOutput {
    pub report: Report,
    pub sankey: Vec<SankeyFlow>,
}

struct Joined<'a> {
    pred: &'a Prediction,
    record: &'a Record,
}

fn component(joined: &[Joined<'_>], c: usize) -> Vec<f64> {
    joined.iter().map(|j| j.pred.mean[c]).collect()
}

fn skip_note(reason: impl std::fmt::Display) -> String {
    format!("skipped: {}", reason)
}

fn metrics(rows: &mut Vec<Row>, joined: &[Joined<'_>]) -> Result<()> {
    let names = component_names();
    let labeled: Vec<(&Prediction, NoiseStrengths)> = joined
        .iter()
        .filter_map(|j| j.record.strengths().transpose().map(|t| t.map(|t| (j.pred, t))))
        .collect::<Result<_>>()?;
    let n = labeled.len();
    if n == 0 {
        rows.push(Row::missing("rmse", "all", 0, &skip_note("no ground-truth strengths")));
        return Ok(());
    }
    let mut subsets: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    let flat_p: Vec<f64> = labeled.iter().flat_map(|(p, _)| p.mean).collect();
    let flat_t: Vec<f64> = labeled.iter().flat_map(|(_, t)| *t.as_array()).collect();
    subsets.push(("all".into(), flat_p, flat_t));
    for (c, name) in names.iter().enumerate() {
        let p = labeled.iter().map(|(p, _)| p.mean[c]).collect();
        let t = labeled.iter().map(|(_, t)| t.as_array()[c]).collect();
        subsets.push((name.clone(), p, t));
    }
    for (subset, p, t) in &subsets {
        let k = p.len();
        let rmse = (p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k as f64).sqrt();
        rows.push(Row::value("rmse", subset, rmse, k));
        match regression_metrics(p, t) {
            Ok(m) => {
                rows.push(Row::value("r_squared", subset, m.r_squared, k));
                rows.push(match m.pearson_r {
                    Some(r) => Row::value("pearson_r", subset, r, k),
                    None => Row::missing("pearson_r", subset, k, "undefined: constant predictions"),
                });
            }
            Err(e) => {
                rows.push(Row::missing("r_squared", subset, k, &format!("undefined: {}", e)));
                rows.push(Row::missing("pearson_r", subset, k, &format!("undefined: {}", e)));
            }
        }
        if k >= 2 {
            let fit = fit_residual_gaussian(p, t)?;
            rows.push(Row::value("residual_mu", subset, fit.mu, k));
            rows.push(Row::value("residual_sigma", subset, fit.sigma, k).note("sample standard deviation"));
        }
    }
    Ok(())
}

fn classification(rows: &mut Vec<Row>, joined: &[Joined<'_>], thresholds: &[f64]) -> Result<()> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for j in joined {
        if let Some(t) = j.record.strengths()? {
            pred.push(NoiseStrengths::new(j.pred.mean)?);
            truth.push(t);
        }
    }
    if pred.is_empty() {
        rows.push(Row::missing("dominant_accuracy", "all", 0, &skip_note("no ground-truth strengths")));
        return Ok(());
    }
    let r = classification_report(&pred, &truth, thresholds)?;
    rows.push(Row::value("dominant_accuracy", "all", r.dominant_accuracy, r.n).note("argmax, ties to the first component"));
    for (th, acc) in r.threshold_accuracy {
        rows.push(
            Row::value("threshold_accuracy", &format!("threshold={}", th), acc, r.n * NUM_COMPONENTS)
                .note("share of (image, component) pairs on the same side of the threshold"),
        );
    }
    Ok(())
}

/// Numeric metadata fields present on every joined record.
fn shared_features(joined: &[Joined<'_>]) -> Vec<&'static str> {
    if joined.is_empty() {
        return Vec::new();
    }
    Metadata::NUMERIC
        .into_iter()
        .filter(|f| joined.iter().all(|j| j.record.metadata.numeric(f).is_some()))
        .collect()
}

fn feature_rows(joined: &[Joined<'_>], features: &[&str]) -> Vec<Vec<f64>> {
    joined
        .iter()
        .map(|j| features.iter().map(|f| j.record.metadata.numeric(f).expect("shared field")).collect())
        .collect()
}

fn correlation(rows: &mut Vec<Row>, joined: &[Joined<'_>]) -> Result<()> {
    let n = joined.len();
    if n < 2 {
        rows.push(Row::missing("pearson_r", "all", n, &skip_note("fewer than two predictions")));
        return Ok(());
    }
    let features = shared_features(joined);
    let mut cols: Vec<(String, Vec<f64>)> =
        component_names().iter().enumerate().map(|(c, name)| (name.clone(), component(joined, c))).collect();
    let feats = feature_rows(joined, &features);
    for (k, f) in features.iter().enumerate() {
        cols.push((f.to_string(), feats.iter().map(|r| r[k]).collect()));
    }
    let m = correlation_matrix(&cols)?;
    let note = if features.is_empty() { "no numeric metadata; components only" } else { "" };
    for i in 0..m.names.len() {
        for j in (i + 1)..m.names.len() {
            let subset = format!("{}~{}", m.names[i], m.names[j]);
            rows.push(match m.values[i][j] {
                Some(r) => Row::value("pearson_r", &subset, r, n).note(note),
                None => Row::missing("pearson_r", &subset, n, "undefined: constant column"),
            });
        }
    }
    Ok(())
}

fn shapley(rows: &mut Vec<Row>, joined: &[Joined<'_>], background: usize) -> Result<Vec<SankeyFlow>> {
    let names = component_names();
    let features = shared_features(joined);
    let n = joined.len();
    if features.is_empty() {
        for name in &names {
            rows.push(Row::missing("mean_abs_shap", name, n, &skip_note("missing metadata")));
        }
        return Ok(Vec::new());
    }
    let x = feature_rows(joined, &features);
    let bg: Vec<Vec<f64>> = x.iter().take(background.max(1)).cloned().collect();
    let mut flows = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let y = component(joined, c);
        let model = match surrogate_fit(&x, &y) {
            Ok(m) => m,
            Err(e) => {
                rows.push(Row::missing("mean_abs_shap", name, n, &skip_note(e)));
                continue;
            }
        };
        let note = if model.ridge { "ridge fallback: rank-deficient design" } else { "" };
        rows.push(Row::value("surrogate_r_squared", name, model.r_squared, n).note(note));
        let report = attribution_report(&|z: &[f64]| model.predict(z), &x, &bg)?;
        for (f, v) in features.iter().zip(&report.mean_abs) {
            rows.push(Row::value("mean_abs_shap", &format!("{}->{}", f, name), *v, n));
            flows.push(SankeyFlow { source_feature: f.to_string(), target_noise: name.clone(), mean_abs_shap: *v });
        }
    }
    Ok(flows)
}

fn depth(rows: &mut Vec<Row>, joined: &[Joined<'_>], control_arm: &str) {
    let names = component_names();
    let usable: Vec<&Joined<'_>> =
        joined.iter().filter(|j| j.record.metadata.depth_um.is_some() && j.record.metadata.arm.is_some()).collect();
    if usable.is_empty() {
        for name in &names {
            rows.push(Row::missing("depth_slope", name, 0, &skip_note("missing metadata (depth_um, arm)")));
        }
        return;
    }
    let d: Vec<f64> = usable.iter().map(|j| j.record.metadata.depth_um.expect("filtered")).collect();
    let arm: Vec<bool> = usable.iter().map(|j| j.record.metadata.arm.as_deref() != Some(control_arm)).collect();
    for (c, name) in names.iter().enumerate() {
        let v: Vec<f64> = usable.iter().map(|j| j.pred.mean[c]).collect();
        let r = match depth_two_arm(&d, &v, &arm) {
            Ok(r) => r,
            Err(e) => {
                rows.push(Row::missing("depth_slope", name, usable.len(), &skip_note(e)));
                continue;
            }
        };
        for (label, fit) in [("control", &r.control), ("intervention", &r.intervention)] {
            let subset = format!("{}:{}", name, label);
            rows.push(Row::with_se("depth_slope", &subset, fit.slope, fit.slope_se, fit.n).note("per µm"));
            rows.push(Row::with_se("depth_intercept", &subset, fit.intercept, fit.intercept_se, fit.n));
            rows.push(Row::value("depth_r_squared", &subset, fit.r_squared, fit.n));
        }
        let n = usable.len();
        rows.push(
            Row::with_se("slope_difference", name, r.slope_difference, r.difference_se, n)
                .note("intervention minus control"),
        );
        rows.push(Row::value("slope_t", name, r.t, n).note(format!("df={}", r.df)));
        rows.push(Row::value("slope_p_value", name, r.p_two_sided, n).note("two-sided"));
        rows.push(Row::value("cohens_f2", name, r.effect.f_squared, n).note(format!(
            "{} (medium at {}, large at {})",
            r.effect.class,
            EffectClass::MEDIUM_AT,
            EffectClass::LARGE_AT
        )));
    }
}

pub fn analyze(cfg: &Config, preds: &[Prediction], manifest: &Manifest, provenance: Provenance) -> Result<AnalyzeOutput> {
    for a in &cfg.analyze.analyses {
        if !ANALYSES.contains(&a.as_str()) {
            return Err(invalid_arg!("unknown analysis `{}`; expected one of {}", a, ANALYSES.join(", ")));
        }
    }
    let by_id: HashMap<&str, &Record> = manifest.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let joined: Vec<Joined<'_>> = preds
        .iter()
        .map(|p| {
            by_id
                .get(p.id.as_str())
                .map(|&record| Joined { pred: p, record })
                .ok_or_else(|| invalid_arg!("prediction id `{}` is not in the manifest", p.id))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut sankey = Vec::new();
    for a in ANALYSES {
        if !cfg.analyze.analyses.iter().any(|x| x == a) {
            continue;
        }
        match a {
            "metrics" => metrics(&mut rows, &joined)?,
            "classification" => classification(&mut rows, &joined, &cfg.analyze.thresholds)?,
            "correlation" => correlation(&mut rows, &joined)?,
            "shapley" => sankey = shapley(&mut rows, &joined, cfg.analyze.shapley_background)?,
            "depth" => depth(&mut rows, &joined, &cfg.analyze.control_arm),
            _ => unreachable!("validated above"),
        }
    }
    Ok(AnalyzeOutput { report: Report { provenance, rows }, sankey })
}

#[derive(Serialize)]
struct SankeyCsvRow<'a> {
    source_feature: &'a str,
    target_noise: &'a str,
    mean_abs_shap: f64,
    checkpoint_sha256: &'a str,
    manifest_sha256: &'a str,
    seed: u64,
}

pub fn write_sankey(path: &Path, flows: &[SankeyFlow], prov: &Provenance) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if flows.is_empty() {
        w.write_record([
            "source_feature", "target_noise", "mean_abs_shap", "checkpoint_sha256", "manifest_sha256", "seed",
        ])?;
    }
    for f in flows {
        w.serialize(SankeyCsvRow {
            source_feature: &f.source_feature,
            target_noise: &f.target_noise,
            mean_abs_shap: f.mean_abs_shap,
            checkpoint_sha256: &prov.checkpoint_sha256,
            manifest_sha256: &prov.manifest_sha256,
            seed: prov.seed,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &Config, predictions: &Path, manifest_path: &Path, out: &Path) -> Result<AnalyzeOutput> {
    ensure_dir(out)?;
    cfg.echo(out)?;
    let manifest = Manifest::load(manifest_path)?;
    let (preds, prov) = read_predictions(predictions)?;
    let provenance = Provenance {
        checkpoint_sha256: prov.map(|p| p.checkpoint_sha256).unwrap_or_default(),
        manifest_sha256: manifest.digest(),
        seed: cfg.seed,
    };
    let result = analyze(cfg, &preds, &manifest, provenance)?;
    result.report.write(out, REPORT_STEM)?;
    if cfg.analyze.analyses.iter().any(|a| a == "shapley") {
        write_sankey(&out.join(SANKEY_NAME), &result.sankey, &result.report.provenance)?;
    }
    Ok(result)
}
