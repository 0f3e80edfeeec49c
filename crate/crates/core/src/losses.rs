//! Training objectives. Each returns its value together with the exact
//! gradient with respect to its inputs.
//!
//! The total is `reg + λ1·(sparsity + smoothness) + λ2·cluster`.

use serde::{Deserialize, Serialize};

use crate::clustering::{cosine_sim, ClusterState};
use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::numerics::{dot, unit_normalize, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the sparsity and temporal smoothness terms.
    pub lambda1: f64,
    /// Weight of the clustering term.
    pub lambda2: f64,
    /// Compactness vs. distance balance for anomalous batches.
    pub alpha: f64,
    /// Confidence threshold for cluster members.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 8e-5, lambda2: 8e-5, alpha: 0.7, beta: 0.25 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda1 >= 0.0
            && self.lambda2 >= 0.0
            && (0.0..=1.0).contains(&self.alpha)
            && self.beta >= 0.0
            && [self.lambda1, self.lambda2, self.beta].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss weights {self:?}")))
        }
    }
}

/// Mean squared error against the video label broadcast over the batch.
pub fn regression_loss(scores: &[f64], label: Label) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::Shape("regression loss of an empty batch".into()));
    }
    let n = scores.len() as f64;
    let y = label.target();
    let value = scores.iter().map(|s| (y - s) * (y - s)).sum::<f64>() / n;
    let grad = scores.iter().map(|s| -2.0 * (y - s) / n).collect();
    Ok((value, grad))
}

/// Mean squared difference of consecutive scores; 0 for a single score.
pub fn temporal_smoothness_loss(scores: &[f64]) -> (f64, Vec<f64>) {
    let n = scores.len();
    let mut grad = vec![0.0; n];
    if n < 2 {
        return (0.0, grad);
    }
    let denom = (n - 1) as f64;
    let mut value = 0.0;
    for l in 0..n - 1 {
        let diff = scores[l + 1] - scores[l];
        value += diff * diff;
        grad[l + 1] += 2.0 * diff / denom;
        grad[l] -= 2.0 * diff / denom;
    }
    (value / denom, grad)
}

/// Mean score of the batch.
pub fn sparsity_loss(scores: &[f64]) -> (f64, Vec<f64>) {
    let n = scores.len();
    if n == 0 {
        return (0.0, vec![]);
    }
    let value = scores.iter().sum::<f64>() / n as f64;
    (value, vec![1.0 / n as f64; n])
}

/// Batch rows that pass the confidence filter, split by their cluster.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfidentMembers {
    pub cluster1: Vec<usize>,
    pub cluster2: Vec<usize>,
}

fn cluster_of(state: &ClusterState, start_segment: usize, rows: usize) -> Result<&[u8]> {
    state.assignments.get(start_segment..start_segment + rows).ok_or_else(|| {
        Error::Shape(format!(
            "batch rows {start_segment}..{} exceed the {} clustered segments of {:?}",
            start_segment + rows,
            state.assignments.len(),
            state.video_id
        ))
    })
}

/// Keeps a row of cluster k only if `1 - sim(g, c_k) < β·(1 - sim(c1, c2))`.
pub fn confident_members(g: &Mat, state: &ClusterState, start_segment: usize, beta: f64) -> Result<ConfidentMembers> {
    let assigned = cluster_of(state, start_segment, g.rows())?;
    let threshold = beta * (1.0 - cosine_sim(&state.c1, &state.c2));
    let (u1, u2) = (unit_normalize(&state.c1), unit_normalize(&state.c2));
    let mut out = ConfidentMembers::default();
    for (l, (row, &k)) in g.row_iter().zip(assigned).enumerate() {
        let own = if k == 1 { &u1 } else { &u2 };
        if 1.0 - dot(row, own) < threshold {
            if k == 1 {
                out.cluster1.push(l);
            } else {
                out.cluster2.push(l);
            }
        }
    }
    Ok(out)
}

/// Clustering loss of one batch and its gradient w.r.t. `g`.
///
/// Rows of `g` are taken to be unit-normalized (or zero), so `sim(g, c)` is
/// computed as `g · c/‖c‖`; the normalization itself is differentiated by the
/// model. Centroids are constants.
pub fn clustering_loss(
    g: &Mat,
    label: Label,
    state: &ClusterState,
    start_segment: usize,
    weights: &LossWeights,
) -> Result<(f64, Mat)> {
    let n = g.rows();
    if state.dim() != g.cols() {
        return Err(Error::Shape(format!("representation width {} vs centroid width {}", g.cols(), state.dim())));
    }
    let mut grad = Mat::zeros(n, g.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    match label {
        Label::Normal => {
            cluster_of(state, start_segment, n)?;
            let ubar = unit_normalize(&state.cbar);
            let mut value = 0.0;
            for l in 0..n {
                value += 1.0 - dot(g.row(l), &ubar);
                for (o, c) in grad.row_mut(l).iter_mut().zip(&ubar) {
                    *o = -c / n as f64;
                }
            }
            Ok((value / n as f64, grad))
        }
        Label::Anomalous => {
            let kept = confident_members(g, state, start_segment, weights.beta)?;
            let (u1, u2) = (unit_normalize(&state.c1), unit_normalize(&state.c2));
            let alpha = weights.alpha;
            let mut compact = 0.0;
            let mut distance = 0.0;
            for (members, own, other) in [(&kept.cluster1, &u1, &u2), (&kept.cluster2, &u2, &u1)] {
                if members.is_empty() {
                    continue;
                }
                let k = members.len() as f64;
                for &l in members {
                    let row = g.row(l);
                    compact += (1.0 - dot(row, own)) / k;
                    distance += (1.0 + dot(row, other)) / k;
                    for ((o, a), b) in grad.row_mut(l).iter_mut().zip(own).zip(other) {
                        *o = (-alpha * a + (1.0 - alpha) * b) / k;
                    }
                }
            }
            Ok((alpha * compact + (1.0 - alpha) * distance, grad))
        }
    }
}

/// Every term of the objective for one batch, with the gradients of the total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub reg: f64,
    pub ts: f64,
    pub sparsity: f64,
    pub cluster: f64,
    pub total: f64,
    pub d_scores: Vec<f64>,
    pub d_g: Mat,
}

/// The clustering context of a batch: its video's state and first segment.
#[derive(Clone, Copy, Debug)]
pub struct ClusterContext<'a> {
    pub state: &'a ClusterState,
    pub start_segment: usize,
}

/// Composes all four losses. Without a cluster context the clustering term is 0.
pub fn total_loss(
    scores: &[f64],
    g: &Mat,
    label: Label,
    cluster: Option<ClusterContext<'_>>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if g.rows() != scores.len() {
        return Err(Error::Shape(format!("{} scores but {} representation rows", scores.len(), g.rows())));
    }
    let (reg, d_reg) = regression_loss(scores, label)?;
    let (ts, d_ts) = temporal_smoothness_loss(scores);
    let (sparsity, d_s) = sparsity_loss(scores);
    let (cluster, d_c) = match cluster {
        Some(ctx) => clustering_loss(g, label, ctx.state, ctx.start_segment, weights)?,
        None => (0.0, Mat::zeros(g.rows(), g.cols())),
    };
    let (l1, l2) = (weights.lambda1, weights.lambda2);
    let total = reg + l1 * (sparsity + ts) + l2 * cluster;
    let d_scores = (0..scores.len()).map(|i| d_reg[i] + l1 * (d_s[i] + d_ts[i])).collect();
    Ok(LossBreakdown { reg, ts, sparsity, cluster, total, d_scores, d_g: d_c.scale(l2) })
}
