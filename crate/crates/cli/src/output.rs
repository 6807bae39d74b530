//! Artifact writing: whole document or nothing.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

/// Writes via a temp file in the target directory renamed over the final
/// path, so a failing invocation never leaves a partial artifact.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create '{}'", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temp file in '{}'", dir.display()))?;
    tmp.write_all(text.as_bytes())
        .with_context(|| format!("cannot write '{}'", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("cannot replace '{}'", path.display()))?;
    Ok(())
}

/// File when a path was given, stdout otherwise.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}
