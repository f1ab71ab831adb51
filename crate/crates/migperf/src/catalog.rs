//! Device catalog file loading.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use migperf_core::device::{CatalogError, DeviceCatalogEntry};
use serde::{Deserialize, Serialize};

pub const CATALOG_ENV: &str = "MIGPERF_CATALOG";

/// The catalog shipped with the tool.
pub const DEFAULT_CATALOG: &str = include_str!("../catalog/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogFile {
    pub devices: Vec<DeviceCatalogEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogLoadError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: {source}")]
    Invalid { origin: String, source: CatalogError },
}

/// Parses and validates catalog text. Blank input is an empty catalog.
pub fn parse_catalog(text: &str, origin: &str) -> Result<Vec<DeviceCatalogEntry>, CatalogLoadError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let file: CatalogFile = serde_json::from_str(text).map_err(|e| CatalogLoadError::Parse {
        origin: origin.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let invalid = |source| CatalogLoadError::Invalid {
        origin: origin.into(),
        source,
    };
    let mut seen = BTreeSet::new();
    for entry in &file.devices {
        entry.validate().map_err(invalid)?;
        if !seen.insert(entry.model_name.as_str()) {
            return Err(invalid(CatalogError::DuplicateDevice(entry.model_name.clone())));
        }
    }
    Ok(file.devices)
}

pub fn load_catalog(path: &Path) -> Result<Vec<DeviceCatalogEntry>, CatalogLoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| CatalogLoadError::Io {
        path: path.into(),
        source,
    })?;
    parse_catalog(&text, &path.display().to_string())
}

/// Explicit path, else `MIGPERF_CATALOG`, else the built-in catalog.
pub fn resolve_catalog(explicit: Option<&Path>) -> Result<Vec<DeviceCatalogEntry>, CatalogLoadError> {
    let env = std::env::var_os(CATALOG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    match explicit.map(Path::to_path_buf).or(env) {
        Some(path) => load_catalog(&path),
        None => parse_catalog(DEFAULT_CATALOG, "<built-in catalog>"),
    }
}
