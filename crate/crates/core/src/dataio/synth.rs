//! Synthetic weakly labelled datasets with known frame-level ground truth.
//!
//! Normal segments are drawn from `N(0, σ²I)`. Anomalous videos contain one
//! contiguous span of segments drawn from `N(μ, σ²I)` with
//! `‖μ‖ = mean_separation · σ` along a seeded random direction; the rest of the
//! video is normal. Train and test splits share the class distributions.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{write_features, write_ground_truth, Dataset, VideoRecord};
use super::manifest::{Label, Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::numerics::{unit_normalize, Mat, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub d: usize,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub segments_per_video: usize,
    /// Fraction of an anomalous video's segments inside the anomalous span.
    pub span_fraction: f64,
    /// Distance between the class means, in units of `noise_sigma`.
    pub mean_separation: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub n_test_normal: usize,
    #[serde(default)]
    pub n_test_anomalous: usize,
    #[serde(default = "default_segment_len")]
    pub segment_len: usize,
}

fn default_segment_len() -> usize {
    16
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 32,
            n_normal: 10,
            n_anomalous: 10,
            segments_per_video: 64,
            span_fraction: 0.25,
            mean_separation: 3.0,
            noise_sigma: 1.0,
            n_test_normal: 0,
            n_test_anomalous: 0,
            segment_len: 16,
        }
    }
}

impl SynthConfig {
    /// The benchmark used by the end-to-end checks: 40+40 training videos and
    /// 10+10 test videos of 64 segments, means 3σ apart.
    pub fn benchmark() -> Self {
        Self { n_normal: 40, n_anomalous: 40, n_test_normal: 10, n_test_anomalous: 10, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.span_fraction > 0.0 && self.span_fraction <= 1.0) {
            return Err(Error::Config(format!("span_fraction {} outside (0, 1]", self.span_fraction)));
        }
        if self.d == 0 || self.segments_per_video == 0 || self.segment_len == 0 {
            return Err(Error::Config("d, segments_per_video and segment_len must be positive".into()));
        }
        if self.n_normal + self.n_anomalous == 0 {
            return Err(Error::Config("no training videos requested".into()));
        }
        if self.noise_sigma.is_nan()
            || self.noise_sigma <= 0.0
            || !self.mean_separation.is_finite()
            || self.mean_separation < 0.0
        {
            return Err(Error::Config("noise_sigma must be > 0 and mean_separation >= 0".into()));
        }
        Ok(())
    }

    /// Number of anomalous segments in each anomalous video.
    pub fn span_len(&self) -> usize {
        ((self.span_fraction * self.segments_per_video as f64).round() as usize).clamp(1, self.segments_per_video)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_owned(), source })
    }
}

/// Generated train and test videos.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub train: Vec<VideoRecord>,
    pub test: Vec<VideoRecord>,
}

impl SynthData {
    pub fn train_dataset(&self, segment_len: usize) -> Result<Dataset> {
        Dataset::new(self.train.clone(), segment_len)
    }

    pub fn test_dataset(&self, segment_len: usize) -> Result<Dataset> {
        Dataset::new(self.test.clone(), segment_len)
    }
}

/// Generates the videos in memory. Values are rounded through `f32`, so they
/// equal what a write/read cycle through feature files produces.
pub fn synth_videos(cfg: &SynthConfig, seed: u64) -> Result<SynthData> {
    cfg.validate()?;
    let mut dir_rng = SeededRng::with_stream(seed, 0);
    let direction: Vec<f64> = loop {
        let v: Vec<f64> = (0..cfg.d).map(|_| dir_rng.normal()).collect();
        let u = unit_normalize(&v);
        if u.iter().any(|&x| x != 0.0) {
            break u;
        }
    };
    let shift: Vec<f64> = direction.iter().map(|u| u * cfg.mean_separation * cfg.noise_sigma).collect();

    let mut stream = 1u64;
    let mut make = |split: &str, label: Label, count: usize| -> Vec<VideoRecord> {
        (0..count)
            .map(|i| {
                let mut rng = SeededRng::with_stream(seed, stream);
                stream += 1;
                let tag = match label {
                    Label::Normal => "normal",
                    Label::Anomalous => "anomalous",
                };
                generate_video(cfg, format!("{split}_{tag}_{i:03}"), label, &shift, &mut rng)
            })
            .collect()
    };
    // Anomalous videos first, as in the usual published split lists.
    let mut train = make("train", Label::Anomalous, cfg.n_anomalous);
    train.extend(make("train", Label::Normal, cfg.n_normal));
    let mut test = make("test", Label::Anomalous, cfg.n_test_anomalous);
    test.extend(make("test", Label::Normal, cfg.n_test_normal));
    Ok(SynthData { train, test })
}

fn generate_video(
    cfg: &SynthConfig,
    video_id: String,
    label: Label,
    shift: &[f64],
    rng: &mut SeededRng,
) -> VideoRecord {
    let m = cfg.segments_per_video;
    let span = match label {
        Label::Normal => 0..0,
        Label::Anomalous => {
            let len = cfg.span_len();
            let start = rng.below(m - len + 1);
            start..start + len
        }
    };
    let mut features = Mat::zeros(m, cfg.d);
    for s in 0..m {
        let anomalous = span.contains(&s);
        for (c, v) in features.row_mut(s).iter_mut().enumerate() {
            let mean = if anomalous { shift[c] } else { 0.0 };
            *v = (mean + cfg.noise_sigma * rng.normal()) as f32 as f64;
        }
    }
    let p = cfg.segment_len;
    let mut gt = vec![0u8; m * p];
    for s in span {
        gt[s * p..(s + 1) * p].fill(1);
    }
    VideoRecord { video_id, label, frame_count: m * p, features, frame_gt: Some(gt) }
}

/// Paths written by [`synth_generate`].
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub train_manifest: PathBuf,
    pub test_manifest: Option<PathBuf>,
    pub data: SynthData,
}

/// Writes a synthetic dataset under `out_dir`: `train.json`, `test.json` (when
/// test videos are requested), `features/*.clwf` and `gt/*.gt`.
pub fn synth_generate(cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<SynthOutput> {
    let data = synth_videos(cfg, seed)?;
    for sub in ["features", "gt"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let write_split = |videos: &[VideoRecord], name: &str| -> Result<PathBuf> {
        let mut entries = Vec::with_capacity(videos.len());
        for v in videos {
            let feat = PathBuf::from("features").join(format!("{}.clwf", v.video_id));
            let gt = PathBuf::from("gt").join(format!("{}.gt", v.video_id));
            write_features(&out_dir.join(&feat), &v.features)?;
            write_ground_truth(&out_dir.join(&gt), v.frame_gt.as_deref().unwrap_or_default())?;
            entries.push(ManifestEntry {
                video_id: v.video_id.clone(),
                path: feat,
                label: v.label,
                frame_count: v.frame_count,
                gt_path: Some(gt),
            });
        }
        let path = out_dir.join(name);
        Manifest { entries, base_dir: out_dir.to_owned() }.write(&path)?;
        Ok(path)
    };
    let train_manifest = write_split(&data.train, "train.json")?;
    let test_manifest = if data.test.is_empty() { None } else { Some(write_split(&data.test, "test.json")?) };
    Ok(SynthOutput { train_manifest, test_manifest, data })
}
