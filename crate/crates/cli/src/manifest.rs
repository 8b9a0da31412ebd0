//! Line-delimited JSON manifests.
//!
//! One record per line. The canonical form is the serializer's output: fields
//! in declaration order, absent optionals omitted, no whitespace. Image paths
//! are relative to the manifest's directory.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use noisomics_core::engine::{parse_order, NUM_COMPONENTS};
use noisomics_core::rng::parse_stream;
use noisomics_core::{NoiseStrengths, Primitive, RngStream};
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Clean,
    Corrupted,
    External,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Clean => "clean",
            Role::Corrupted => "corrupted",
            Role::External => "external",
        })
    }
}

/// Acquisition metadata. Units: seconds for shutter speed, µm for depth.
/// `arm` labels the acquisition condition for two-arm depth comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iso: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shutter_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brightness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<String>,
}

impl Metadata {
    pub fn is_empty(&self) -> bool {
        *self == Metadata::default()
    }

    /// Names of the numeric fields, in a fixed order.
    pub const NUMERIC: [&'static str; 5] = ["iso", "shutter_speed", "brightness", "temperature", "depth_um"];

    pub fn numeric(&self, name: &str) -> Option<f64> {
        match name {
            "iso" => self.iso.map(|v| v as f64),
            "shutter_speed" => self.shutter_speed,
            "brightness" => self.brightness,
            "temperature" => self.temperature,
            "depth_um" => self.depth_um,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub path: String,
    pub role: Role,
    /// Source record of a corrupted image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strengths: Option<[f64; NUM_COMPONENTS]>,
    /// Text form of the generating stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_path: Option<String>,
    /// Stage order by primitive name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    pub metadata: Metadata,
}

impl Record {
    pub fn strengths(&self) -> Result<Option<NoiseStrengths>> {
        self.strengths
            .map(NoiseStrengths::new)
            .transpose()
            .with_context(|| format!("record `{}`", self.id))
    }

    pub fn stream(&self) -> Result<Option<RngStream>> {
        match &self.seed_path {
            None => Ok(None),
            Some(s) => parse_stream(s)
                .map(Some)
                .with_context(|| format!("record `{}`: malformed seed_path `{}`", self.id, s)),
        }
    }

    pub fn order(&self) -> Result<Option<Vec<Primitive>>> {
        match &self.order {
            None => Ok(None),
            Some(o) => Ok(Some(parse_order(o).with_context(|| format!("record `{}`", self.id))?)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Directory that relative image paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<Record>, base_dir: impl Into<PathBuf>) -> Self {
        Self { records, base_dir: base_dir.into() }
    }

    /// Parses and validates; blank lines are ignored.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(line).with_context(|| format!("manifest line {}", i + 1))?;
            records.push(r);
        }
        let m = Self::new(records, base_dir);
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    /// Canonical text: one compact JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    /// Unique ids, resolvable references and well-formed optional fields.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.id.is_empty() {
                bail!("record with empty id");
            }
            if !seen.insert(r.id.as_str()) {
                bail!("duplicate id `{}`", r.id);
            }
        }
        let roles: HashMap<&str, Role> = self.records.iter().map(|r| (r.id.as_str(), r.role)).collect();
        for r in &self.records {
            match (r.role, &r.clean_id) {
                (Role::Corrupted, None) => bail!("corrupted record `{}` has no clean_id", r.id),
                (Role::Corrupted, Some(c)) => match roles.get(c.as_str()) {
                    Some(Role::Clean | Role::External) => {}
                    Some(Role::Corrupted) => bail!("record `{}` references corrupted record `{}`", r.id, c),
                    None => bail!("record `{}` references unknown id `{}`", r.id, c),
                },
                (_, Some(_)) => bail!("{} record `{}` must not carry a clean_id", r.role, r.id),
                _ => {}
            }
            r.strengths()?;
            r.stream()?;
            r.order()?;
        }
        Ok(())
    }

    pub fn resolve(&self, r: &Record) -> PathBuf {
        self.base_dir.join(&r.path)
    }

    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.role == role)
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }
}
