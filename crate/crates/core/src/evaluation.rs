//! Frame-level scoring and metrics: segment-to-frame expansion, ROC AUC, false
//! alarm rate, and per-video score timelines.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Label};
use crate::error::{Error, Result};
use crate::model::{score_video, ForwardOptions, ModelParams};
use crate::trainer::TrainConfig;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Repeats each segment score over its `p` frames. Trailing frames beyond the
/// last full segment take the last segment's score.
pub fn expand_scores(segment_scores: &[f64], p: usize, frame_count: usize) -> Result<Vec<f64>> {
    let m = frame_count.checked_div(p).unwrap_or(0);
    if m == 0 || segment_scores.len() != m {
        return Err(Error::Shape(format!(
            "{} segment scores for {frame_count} frames at p={p} (expected {m})",
            segment_scores.len()
        )));
    }
    Ok((0..frame_count).map(|t| segment_scores[(t / p).min(m - 1)]).collect())
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Area under the ROC curve, ties counted as one half.
///
/// Sweeps thresholds over the distinct scores in descending order and
/// integrates with the trapezoid rule. The area is accumulated in integer
/// half-pair units, so the result is exactly the Mann-Whitney statistic.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp_above: u128 = 0;
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut p, mut n) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        twice_area += n * (2 * tp_above + p);
        tp_above += p;
    }
    Ok(twice_area as f64 / (2 * pos * neg) as f64)
}

/// Fraction of negative frames with score ≥ `threshold`.
pub fn far(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (mut fp, mut neg) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 0 {
            neg += 1;
            if s >= threshold {
                fp += 1;
            }
        }
    }
    if neg == 0 {
        return Err(Error::Metric("false alarm rate needs negative frames".into()));
    }
    Ok(fp as f64 / neg as f64)
}

/// Per-frame scores of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTimeline {
    pub video_id: String,
    pub label: Label,
    pub frame_scores: Vec<f64>,
    pub frame_gt: Option<Vec<u8>>,
}

impl ScoreTimeline {
    /// Columns `frame_index,score,gt`; `gt` is empty when unknown.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,score,gt\n");
        for (t, s) in self.frame_scores.iter().enumerate() {
            let gt = self.frame_gt.as_ref().map(|g| g[t].to_string()).unwrap_or_default();
            writeln!(out, "{t},{s},{gt}").expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub threshold: f64,
    pub nsm1: bool,
    pub nsm2: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { batch_size: 32, threshold: DEFAULT_THRESHOLD, nsm1: true, nsm2: true }
    }
}

impl EvalOptions {
    /// Scores the way the model was trained: same batch size, same NSMs.
    pub fn for_config(cfg: &TrainConfig) -> Self {
        Self { batch_size: cfg.batch_size, threshold: DEFAULT_THRESHOLD, nsm1: cfg.use_nsm1, nsm2: cfg.use_nsm2 }
    }
}

/// Summary metrics, serialized as the JSON report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    /// `None` when the test set has no normal videos.
    pub far: Option<f64>,
    pub n_frames: usize,
    pub threshold: f64,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub timelines: Vec<ScoreTimeline>,
}

/// Scores every video in evaluation mode and pools all frames.
///
/// AUC is taken over every frame against its ground truth; FAR over the frames
/// of normal-labeled videos only.
pub fn evaluate(params: &ModelParams, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if dataset.videos.is_empty() {
        return Err(Error::Dataset("test set is empty".into()));
    }
    let forward_opts = ForwardOptions::eval().with_nsm(opts.nsm1, opts.nsm2);
    let mut timelines = Vec::with_capacity(dataset.videos.len());
    let (mut all_scores, mut all_gt) = (Vec::new(), Vec::new());
    let (mut normal_scores, mut normal_gt) = (Vec::new(), Vec::new());
    for video in &dataset.videos {
        let gt = video
            .frame_gt
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("test video {:?} has no frame ground truth", video.video_id)))?;
        let segment_scores = score_video(params, video, opts.batch_size, forward_opts)?;
        let frames = expand_scores(&segment_scores, dataset.segment_len, video.frame_count)?;
        all_scores.extend_from_slice(&frames);
        all_gt.extend_from_slice(gt);
        if video.label == Label::Normal {
            normal_scores.extend_from_slice(&frames);
            normal_gt.extend_from_slice(gt);
        }
        timelines.push(ScoreTimeline {
            video_id: video.video_id.clone(),
            label: video.label,
            frame_scores: frames,
            frame_gt: Some(gt.clone()),
        });
    }
    let auc = roc_auc(&all_scores, &all_gt)?;
    let far = if normal_scores.is_empty() { None } else { Some(far(&normal_scores, &normal_gt, opts.threshold)?) };
    Ok(EvalReport { metrics: Metrics { auc, far, n_frames: all_scores.len(), threshold: opts.threshold }, timelines })
}
