//! Deterministic file output: fixed float formatting, fixed row order and a
//! trailing `# key=value` metadata block on every CSV.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::Config;
use crate::error::CliResult;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `body` then the metadata block.
pub fn write_csv(
    path: &Path,
    config: Option<&Config>,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    write_metadata(&mut w, config)?;
    w.flush()?;
    Ok(())
}

pub fn write_metadata(w: &mut dyn Write, config: Option<&Config>) -> std::io::Result<()> {
    writeln!(w, "# ufd_version={VERSION}")?;
    if let Some(c) = config {
        writeln!(w, "# config_sha256={}", c.hash())?;
        writeln!(w, "# config={}", c.canonical_json())?;
    }
    Ok(())
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}
