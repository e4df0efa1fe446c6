//! Files in and out: CSV datasets, flat config files, trace records and
//! report tables.

pub mod artifacts;
pub mod config;
pub mod table;
pub mod trace;

use std::fs;
use std::path::Path;

use crate::error::Result;

/// Writes `contents` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Fixed four-decimal formatting for summary tables.
pub fn fmt4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else if v.is_nan() {
        "NA".into()
    } else if v > 0.0 {
        "Inf".into()
    } else {
        "-Inf".into()
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
