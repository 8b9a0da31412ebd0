//! Analysis reports: flat metric rows written as CSV and as JSON with the
//! same content.

use std::fs;
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

/// Where a report's inputs came from. Copied into every row.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_sha256: String,
    pub manifest_sha256: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub metric: String,
    pub subset: String,
    pub value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
    /// Category labels, definitions in force, or why an analysis was skipped.
    pub note: String,
}

impl Row {
    /// Non-finite values are stored as missing, with the value in the note.
    pub fn value(metric: &str, subset: &str, value: f64, n: usize) -> Self {
        let finite = value.is_finite();
        Self {
            metric: metric.into(),
            subset: subset.into(),
            value: finite.then_some(value),
            ci_low: None,
            ci_high: None,
            n,
            note: if finite { String::new() } else { format!("non-finite: {}", value) },
        }
    }

    /// `value ± 1.96·se`.
    pub fn with_se(metric: &str, subset: &str, value: f64, se: f64, n: usize) -> Self {
        let row = Self::value(metric, subset, value, n);
        if row.value.is_none() || !se.is_finite() {
            return row;
        }
        Self { ci_low: Some(value - 1.96 * se), ci_high: Some(value + 1.96 * se), ..row }
    }

    pub fn missing(metric: &str, subset: &str, n: usize, note: &str) -> Self {
        Self {
            value: None,
            note: note.into(),
            ..Self::value(metric, subset, 0.0, n)
        }
    }

    /// Sets the note, keeping any non-finite marker in front of it.
    pub fn note(mut self, note: impl Into<String>) -> Self {
        let note = note.into();
        if self.note.is_empty() {
            self.note = note;
        } else if !note.is_empty() {
            self.note = format!("{}; {}", self.note, note);
        }
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    pub rows: Vec<Row>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    metric: &'a str,
    subset: &'a str,
    value: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    n: usize,
    note: &'a str,
    checkpoint_sha256: &'a str,
    manifest_sha256: &'a str,
    seed: u64,
}

impl Report {
    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let p = &self.provenance;
        if self.rows.is_empty() {
            w.write_record([
                "metric", "subset", "value", "ci_low", "ci_high", "n", "note",
                "checkpoint_sha256", "manifest_sha256", "seed",
            ])?;
        }
        for r in &self.rows {
            w.serialize(CsvRow {
                metric: &r.metric,
                subset: &r.subset,
                value: r.value,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                n: r.n,
                note: &r.note,
                checkpoint_sha256: &p.checkpoint_sha256,
                manifest_sha256: &p.manifest_sha256,
                seed: p.seed,
            })?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        fs::write(dir.join(format!("{stem}.json")), self.to_json())?;
        Ok(())
    }

    pub fn find(&self, metric: &str, subset: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.metric == metric && r.subset == subset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_carry_the_same_rows() {
        let mut r = Report {
            provenance: Provenance {
                checkpoint_sha256: "ab".into(),
                manifest_sha256: "cd".into(),
                seed: 4,
            },
            rows: vec![],
        };
        r.push(Row::with_se("slope", "control", 0.5, 0.1, 10));
        r.push(Row::missing("shapley", "gaussian", 0, "skipped: missing metadata"));
        let csv = r.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "metric,subset,value,ci_low,ci_high,n,note,checkpoint_sha256,manifest_sha256,seed"
        );
        assert_eq!(lines.next().unwrap(), "slope,control,0.5,0.304,0.696,10,,ab,cd,4");
        assert_eq!(lines.next().unwrap(), "shapley,gaussian,,,,0,skipped: missing metadata,ab,cd,4");
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn non_finite_values_become_missing() {
        let r = Row::with_se("t", "x", f64::INFINITY, 1.0, 3).note("df=1");
        assert_eq!((r.value, r.ci_low), (None, None));
        assert_eq!(r.note, "non-finite: inf; df=1");
    }
}
