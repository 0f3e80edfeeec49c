//! Binary feature and ground-truth files.
//!
//! Feature file, little-endian throughout:
//!
//! ```text
//! "CLWF" | u32 version = 1 | u32 d | u32 m | m*d f32, row-major, temporal order
//! ```
//!
//! Ground-truth file: one byte (0 or 1) per frame.

use std::fs;
use std::path::Path;

use super::manifest::{Label, Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::numerics::Mat;

pub const FEATURE_MAGIC: &[u8; 4] = b"CLWF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// One video: its label, segment features in temporal order and, for test
/// videos, frame-level ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub label: Label,
    pub frame_count: usize,
    /// `m x d`, one row per segment.
    pub features: Mat,
    pub frame_gt: Option<Vec<u8>>,
}

impl VideoRecord {
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn segments(&self) -> usize {
        self.features.rows()
    }
}

pub fn encode_features(features: &Mat) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * features.as_slice().len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    buf.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    for &v in features.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

/// Writes `features` as a feature file. Values are narrowed to `f32`.
pub fn write_features(path: &Path, features: &Mat) -> Result<()> {
    fs::write(path, encode_features(features)).map_err(|e| Error::io(path, e))
}

/// Reads a feature file into an `m x d` matrix, without checking finiteness.
pub fn read_features(path: &Path) -> Result<Mat> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|reason| Error::Format { path: path.to_owned(), reason })
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<Mat, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err("magic mismatch: not a CLWF feature file".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(format!("unsupported feature file version {version}"));
    }
    let (d, m) = (word(8) as usize, word(12) as usize);
    let expected = HEADER_LEN + 4 * d * m;
    if bytes.len() != expected {
        return Err(format!(
            "dimension mismatch: header says {m}x{d} ({expected} bytes) but file has {} bytes",
            bytes.len()
        ));
    }
    let data = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Mat::from_vec(m, d, data).map_err(|e| e.to_string())
}

pub fn write_ground_truth(path: &Path, gt: &[u8]) -> Result<()> {
    fs::write(path, gt).map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path, frame_count: usize) -> Result<Vec<u8>> {
    let gt = fs::read(path).map_err(|e| Error::io(path, e))?;
    if gt.len() != frame_count {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!("{} ground-truth bytes for {frame_count} frames", gt.len()),
        });
    }
    if let Some(bad) = gt.iter().find(|&&b| b > 1) {
        return Err(Error::Format { path: path.to_owned(), reason: format!("ground-truth byte {bad} is not 0 or 1") });
    }
    Ok(gt)
}

/// Loads one manifest entry, checking the stored segment count against
/// `floor(frame_count / segment_len)`.
pub fn read_video_features(manifest: &Manifest, entry: &ManifestEntry, segment_len: usize) -> Result<VideoRecord> {
    let path = manifest.resolve(&entry.path);
    let features = read_features(&path)?;
    let expected_m = entry.frame_count / segment_len;
    if features.rows() != expected_m {
        return Err(Error::Format {
            path,
            reason: format!(
                "dimension mismatch: {} segments stored, but {} frames / p={segment_len} gives {expected_m}",
                features.rows(),
                entry.frame_count
            ),
        });
    }
    if features.cols() == 0 {
        return Err(Error::Format { path, reason: "feature dimension d = 0".into() });
    }
    if let Some(segment) = features.row_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteFeature { video_id: entry.video_id.clone(), segment });
    }
    let frame_gt = match &entry.gt_path {
        Some(gt) => Some(read_ground_truth(&manifest.resolve(gt), entry.frame_count)?),
        None => None,
    };
    Ok(VideoRecord {
        video_id: entry.video_id.clone(),
        label: entry.label,
        frame_count: entry.frame_count,
        features,
        frame_gt,
    })
}

/// A loaded, immutable set of videos sharing one feature dimension.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub videos: Vec<VideoRecord>,
    pub segment_len: usize,
}

impl Dataset {
    pub fn new(videos: Vec<VideoRecord>, segment_len: usize) -> Result<Self> {
        let d = videos.first().map(VideoRecord::dim).ok_or(Error::EmptyManifest)?;
        if let Some(v) = videos.iter().find(|v| v.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: v.dim() });
        }
        Ok(Self { videos, segment_len })
    }

    pub fn load(manifest_path: &Path, segment_len: usize) -> Result<Self> {
        let manifest = super::load_manifest(manifest_path, segment_len)?;
        let videos = manifest
            .entries
            .iter()
            .map(|e| read_video_features(&manifest, e, segment_len))
            .collect::<Result<Vec<_>>>()?;
        Self::new(videos, segment_len)
    }

    pub fn dim(&self) -> usize {
        self.videos[0].dim()
    }

    pub fn count(&self, label: Label) -> usize {
        self.videos.iter().filter(|v| v.label == label).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn entry(id: &str, path: &str, frames: usize) -> ManifestEntry {
        ManifestEntry {
            video_id: id.into(),
            path: PathBuf::from(path),
            label: Label::Anomalous,
            frame_count: frames,
            gt_path: None,
        }
    }

    #[test]
    fn c3d_sized_header() {
        let dir = tempfile::tempdir().unwrap();
        let feats = Mat::filled(10, 4096, 0.25);
        write_features(&dir.path().join("v.clwf"), &feats).unwrap();
        let manifest = Manifest { entries: vec![], base_dir: dir.path().into() };
        let v = read_video_features(&manifest, &entry("v", "v.clwf", 160), 16).unwrap();
        assert_eq!((v.segments(), v.dim()), (10, 4096));
    }

    #[test]
    fn segment_count_is_floor() {
        let dir = tempfile::tempdir().unwrap();
        write_features(&dir.path().join("v.clwf"), &Mat::ones(1, 3)).unwrap();
        let manifest = Manifest { entries: vec![], base_dir: dir.path().into() };
        let v = read_video_features(&manifest, &entry("v", "v.clwf", 31), 16).unwrap();
        assert_eq!(v.segments(), 1);
        let err = read_video_features(&manifest, &entry("v", "v.clwf", 32), 16).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn nan_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut feats = Mat::ones(3, 2);
        feats[(1, 0)] = f64::NAN;
        write_features(&dir.path().join("v.clwf"), &feats).unwrap();
        let manifest = Manifest { entries: vec![], base_dir: dir.path().into() };
        let err = read_video_features(&manifest, &entry("v", "v.clwf", 48), 16).unwrap_err();
        assert!(matches!(err, Error::NonFiniteFeature { segment: 1, .. }));
        assert!(err.to_string().contains("non-finite feature"));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_features(&Mat::ones(2, 2));
        bytes[0] = b'X';
        assert!(decode_features(&bytes).unwrap_err().contains("magic mismatch"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode_features(&Mat::ones(2, 2));
        let err = decode_features(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.contains("dimension mismatch"));
    }

    #[test]
    fn ground_truth_length_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.gt");
        write_ground_truth(&p, &[0, 1, 1]).unwrap();
        assert_eq!(read_ground_truth(&p, 3).unwrap(), vec![0, 1, 1]);
        assert!(read_ground_truth(&p, 4).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encode_decode_is_bit_exact(
                (m, d, vals) in (1usize..6, 1usize..6).prop_flat_map(|(m, d)| {
                    (Just(m), Just(d), prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), m * d))
                })
            ) {
                let feats = Mat::from_vec(m, d, vals.iter().map(|&v| v as f64).collect()).unwrap();
                let back = decode_features(&encode_features(&feats)).unwrap();
                prop_assert_eq!(back.shape(), (m, d));
                for (a, b) in feats.as_slice().iter().zip(back.as_slice()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
