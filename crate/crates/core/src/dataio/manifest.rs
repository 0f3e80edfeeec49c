use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Video-level label. Serialized as the integer `0` or `1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Normal => 0.0,
            Label::Anomalous => 1.0,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Anomalous),
            other => Err(format!("label {other} outside {{0,1}}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Normal => 0,
            Label::Anomalous => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    /// Feature file, relative to the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative paths in `entries` resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Checks every invariant that does not need the filesystem.
    pub fn validate(&self, segment_len: usize) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(Error::DuplicateVideoId(e.video_id.clone()));
            }
            if e.frame_count < segment_len {
                return Err(Error::InvalidEntry {
                    video_id: e.video_id.clone(),
                    reason: format!("frame_count {} is shorter than one segment ({segment_len} frames)", e.frame_count),
                });
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.entries)
            .map_err(|source| Error::Json { path: path.to_owned(), source })?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Parses and validates a manifest, checking that every referenced file exists.
pub fn load_manifest(path: &Path, segment_len: usize) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_owned(), source })?;
    let base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
    let manifest = Manifest { entries, base_dir };
    manifest.validate(segment_len)?;
    for e in &manifest.entries {
        let files = std::iter::once(&e.path).chain(e.gt_path.as_ref());
        for f in files {
            let full = manifest.resolve(f);
            if !full.is_file() {
                return Err(Error::io(
                    full,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file missing"),
                ));
            }
        }
    }
    Ok(manifest)
}
