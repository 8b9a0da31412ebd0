//! The five subcommands. Each takes a resolved [`Config`](crate::Config),
//! writes its outputs plus the resolved configuration into an output
//! directory, and returns what it wrote for programmatic callers.

pub mod analyze;
pub mod bench;
pub mod estimate;
pub mod synthesize;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use noisomics_core::ImageTensor;

use crate::manifest::{Manifest, Record};
use crate::tensor_io;

/// A request that cannot be served with the given inputs. The binary exits
/// with status 2 for these and 1 for everything else.
#[derive(Debug, thiserror::Error)]
#[error("invalid argument: {0}")]
pub struct InvalidArgument(pub String);

macro_rules! invalid_arg {
    ($($t:tt)*) => {
        anyhow::Error::new($crate::commands::InvalidArgument(format!($($t)*)))
    };
}
pub(crate) use invalid_arg;

pub fn load_image(manifest: &Manifest, record: &Record) -> Result<ImageTensor> {
    let path = manifest.resolve(record);
    tensor_io::read_image(&path).with_context(|| format!("record `{}`: {}", record.id, path.display()))
}

/// Column-friendly component names (`salt_pepper` rather than `salt-pepper`).
pub fn component_names() -> [String; 6] {
    noisomics_core::Primitive::ALL.map(|p| p.name().replace('-', "_"))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
