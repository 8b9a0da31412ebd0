//! File formats, manifests, checkpoints, reports and the subcommands of the
//! `noisomics` tool.

pub mod checkpoint_io;
pub mod commands;
pub mod config;
pub mod digest;
pub mod experiments;
pub mod manifest;
pub mod report;
pub mod tensor_io;

pub use config::Config;

/// Runs `f` on a pool of `workers` threads (0 means one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(f))
}
