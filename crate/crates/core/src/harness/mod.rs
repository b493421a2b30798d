//! Operational surface: experiment configuration, multi-seed runs,
//! checkpoints, reports and the built-in verification suites.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod run;
pub mod verify;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ExperimentConfig;
pub use report::{render_table, RunReport};
pub use run::run;
pub use verify::{verify, Suite, SuiteReport};

/// Writes `contents` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents)
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
