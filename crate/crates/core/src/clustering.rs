//! Per-video 2-means over unit-normalized FC-1 representations.
//!
//! Lloyd's algorithm runs in Euclidean space. Rows are unit (or zero) vectors,
//! so Euclidean distance and cosine similarity order points the same way.
//! [`brute_force_2partition`] enumerates every split and is the test oracle.

use std::collections::BTreeMap;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::model::{intermediate_repr, ModelParams};
use crate::numerics::{dot, norm, unit_normalize, Mat, SeededRng};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_RESTARTS: usize = 10;
pub const BRUTE_FORCE_MAX_POINTS: usize = 12;

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Two clusters of one video's segments, computed at the start of an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterState {
    pub video_id: String,
    /// Unit (or zero) centroid of cluster 1.
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    /// `(c1 + c2) / 2`.
    pub cbar: Vec<f64>,
    /// Cluster (1 or 2) of each segment.
    pub assignments: Vec<u8>,
}

impl ClusterState {
    pub fn new(video_id: String, c1: Vec<f64>, c2: Vec<f64>, assignments: Vec<u8>) -> Self {
        let cbar = c1.iter().zip(&c2).map(|(a, b)| (a + b) / 2.0).collect();
        Self { video_id, c1, c2, cbar, assignments }
    }

    pub fn dim(&self) -> usize {
        self.c1.len()
    }
}

pub type ClusterMap = BTreeMap<String, ClusterState>;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// Cluster (1 or 2) of each point.
    pub assignments: Vec<u8>,
    /// Unit-normalized centroids (a zero centroid stays zero).
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    /// Within-cluster sum of squared distances to the cluster means.
    pub objective: f64,
    /// Objective after every Lloyd update of the winning run.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn means(points: &Mat, side: &[usize]) -> [Vec<f64>; 2] {
    let mut sums = [vec![0.0; points.cols()], vec![0.0; points.cols()]];
    let mut counts = [0usize; 2];
    for (row, &k) in points.row_iter().zip(side) {
        counts[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(row) {
            *s += v;
        }
    }
    for k in 0..2 {
        if counts[k] > 0 {
            let n = counts[k] as f64;
            sums[k].iter_mut().for_each(|s| *s /= n);
        }
    }
    sums
}

/// Within-cluster sum of squares of a 0/1 side assignment.
pub fn wcss(points: &Mat, side: &[usize]) -> f64 {
    let centroids = means(points, side);
    points.row_iter().zip(side).map(|(row, &k)| sq_dist(row, &centroids[k])).sum()
}

/// Relabels sides so cluster 1 is the larger one, ties going to the cluster
/// holding the lowest point index. Returns labels in {1, 2} and whether the
/// sides were swapped.
fn canonical_labels(side: &[usize]) -> (Vec<u8>, bool) {
    let ones = side.iter().filter(|&&k| k == 1).count();
    let zeros = side.len() - ones;
    let swap = ones > zeros || (ones == zeros && side.first() == Some(&1));
    let labels = side.iter().map(|&k| if (k == 1) != swap { 2 } else { 1 }).collect();
    (labels, swap)
}

struct LloydRun {
    side: Vec<usize>,
    objective: f64,
    history: Vec<f64>,
}

fn lloyd(points: &Mat, init: [Vec<f64>; 2], max_iter: usize) -> LloydRun {
    let n = points.rows();
    let mut centroids = init;
    let mut side = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, row) in points.row_iter().enumerate() {
            let k = usize::from(sq_dist(row, &centroids[1]) < sq_dist(row, &centroids[0]));
            if side[i] != k {
                side[i] = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        repair_empty(points, &mut side);
        centroids = means(points, &side);
        history.push(wcss(points, &side));
    }
    let objective = wcss(points, &side);
    LloydRun { side, objective, history }
}

/// Moves the point farthest from its centroid into an empty cluster.
fn repair_empty(points: &Mat, side: &mut [usize]) {
    if points.rows() < 2 {
        return;
    }
    let ones = side.iter().filter(|&&k| k == 1).count();
    let empty = match ones {
        0 => 1,
        n if n == side.len() => 0,
        _ => return,
    };
    let centroids = means(points, side);
    let far = points
        .row_iter()
        .enumerate()
        .map(|(i, row)| (i, sq_dist(row, &centroids[side[i]])))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0;
    side[far] = empty;
}

/// The two ends of a farthest-pair sweep: the point farthest from point 0,
/// then the point farthest from that one.
fn farthest_pair(points: &Mat) -> (usize, usize) {
    let farthest_from = |a: usize| {
        let anchor = points.row(a);
        points
            .row_iter()
            .enumerate()
            .map(|(i, r)| (i, sq_dist(r, anchor)))
            .fold((a, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    };
    let a = farthest_from(0);
    (a, farthest_from(a))
}

/// 2-means with a farthest-pair initialization plus `restarts - 1` random
/// seedings; the run with the lowest within-cluster sum of squares wins.
pub fn kmeans2(points: &Mat, rng: &mut SeededRng, max_iter: usize, restarts: usize) -> Result<KMeansResult> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::Shape("kmeans2 needs at least one point".into()));
    }
    if n == 1 {
        let c = unit_normalize(points.row(0));
        return Ok(KMeansResult { assignments: vec![1], c1: c.clone(), c2: c, objective: 0.0, history: vec![] });
    }
    let (a, b) = farthest_pair(points);
    let mut inits = vec![(a, b)];
    for _ in 1..restarts.max(1) {
        let i = rng.below(n);
        let j = (i + 1 + rng.below(n - 1)) % n;
        inits.push((i, j));
    }
    let mut best: Option<LloydRun> = None;
    for (i, j) in inits {
        let run = lloyd(points, [points.row(i).to_vec(), points.row(j).to_vec()], max_iter);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one run");
    let (assignments, swapped) = canonical_labels(&best.side);
    let [m0, m1] = means(points, &best.side);
    let (c1, c2) = if swapped { (m1, m0) } else { (m0, m1) };
    Ok(KMeansResult {
        assignments,
        c1: unit_normalize(&c1),
        c2: unit_normalize(&c2),
        objective: best.objective,
        history: best.history,
    })
}

/// Exhaustive minimum of the within-cluster sum of squares over all 2-way
/// splits of at most [`BRUTE_FORCE_MAX_POINTS`] points. The all-in-one split is
/// enumerated first, so it wins ties (e.g. duplicated points).
pub fn brute_force_2partition(points: &Mat) -> Result<(Vec<u8>, f64)> {
    let n = points.rows();
    if n == 0 || n > BRUTE_FORCE_MAX_POINTS {
        return Err(Error::Shape(format!("brute force needs 1..={BRUTE_FORCE_MAX_POINTS} points, got {n}")));
    }
    let mut best = (vec![0usize; n], f64::INFINITY);
    // Point 0 always sits on side 0; bit i-1 of the mask places point i.
    for mask in 0u32..(1 << (n - 1)) {
        let side: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize }).collect();
        let obj = wcss(points, &side);
        if obj < best.1 {
            best = (side, obj);
        }
    }
    Ok((canonical_labels(&best.0).0, best.1))
}

/// Settings for an epoch-start cluster refresh.
#[derive(Clone, Copy, Debug)]
pub struct RefreshOptions {
    pub batch_size: usize,
    /// Whether NSM-1 is active when computing the representations.
    pub nsm1: bool,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Counts refreshes, so every epoch draws fresh k-means seedings.
    pub round: u64,
}

/// Clusters every video of `dataset` (normal and anomalous alike).
///
/// After k-means, each segment is assigned to the nearer of the two returned
/// unit centroids, so the assignments agree with the stored centroids.
pub fn refresh_clusters(params: &ModelParams, dataset: &Dataset, opts: RefreshOptions) -> Result<ClusterMap> {
    let mut map = ClusterMap::new();
    for (index, video) in dataset.videos.iter().enumerate() {
        let g = intermediate_repr(params, video, opts.batch_size, opts.nsm1)?;
        let mut rng = SeededRng::with_stream(opts.seed.wrapping_add(opts.round), index as u64);
        let km = kmeans2(&g, &mut rng, opts.max_iter, opts.restarts)?;
        let assignments =
            g.row_iter().map(|row| if sq_dist(row, &km.c2) < sq_dist(row, &km.c1) { 2 } else { 1 }).collect();
        map.insert(video.video_id.clone(), ClusterState::new(video.video_id.clone(), km.c1, km.c2, assignments));
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(rows: &[Vec<f64>]) -> Mat {
        let normed: Vec<Vec<f64>> = rows.iter().map(|r| unit_normalize(r)).collect();
        Mat::from_rows(&normed).unwrap()
    }

    fn basis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn cosine_cases() {
        let v = [0.3, -1.2, 2.0];
        assert!((cosine_sim(&v, &v) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&basis(3, 0), &basis(3, 1)), 0.0);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_sim(&v, &neg) + 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[0.0; 3], &v), 0.0);
    }

    fn two_groups(rng: &mut SeededRng, dim: usize) -> Mat {
        let mut rows = Vec::new();
        for center in [0, 1] {
            for _ in 0..5 {
                let mut v = basis(dim, center);
                v.iter_mut().for_each(|x| *x += 0.01 * rng.normal());
                rows.push(v);
            }
        }
        unit_rows(&rows)
    }

    #[test]
    fn separates_two_groups() {
        let mut rng = SeededRng::new(4);
        let pts = two_groups(&mut rng, 16);
        let km = kmeans2(&pts, &mut rng, DEFAULT_MAX_ITER, DEFAULT_RESTARTS).unwrap();
        assert!(km.assignments[..5].iter().all(|&a| a == km.assignments[0]));
        assert!(km.assignments[5..].iter().all(|&a| a != km.assignments[0]));
        let (near_e1, near_e2) = if km.assignments[0] == 1 { (&km.c1, &km.c2) } else { (&km.c2, &km.c1) };
        assert!(1.0 - cosine_sim(near_e1, &basis(16, 0)) < 0.01);
        assert!(1.0 - cosine_sim(near_e2, &basis(16, 1)) < 0.01);
        let (_, oracle) = brute_force_2partition(&pts).unwrap();
        assert!((km.objective - oracle).abs() < 1e-9);
    }

    #[test]
    fn single_point() {
        let pts = unit_rows(&[vec![3.0, 4.0]]);
        let km = kmeans2(&pts, &mut SeededRng::new(0), 10, 3).unwrap();
        assert_eq!(km.assignments, vec![1]);
        assert_eq!(km.c1, vec![0.6, 0.8]);
        assert_eq!(km.c2, km.c1);
    }

    #[test]
    fn two_distinct_points() {
        let pts = unit_rows(&[basis(3, 0), basis(3, 2)]);
        let km = kmeans2(&pts, &mut SeededRng::new(0), 10, 3).unwrap();
        assert_eq!(km.assignments, vec![1, 2]);
        assert_eq!(km.c1, basis(3, 0));
        assert_eq!(km.c2, basis(3, 2));
        assert_eq!(km.objective, 0.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(kmeans2(&Mat::zeros(0, 4), &mut SeededRng::new(0), 10, 1).is_err());
        assert!(brute_force_2partition(&Mat::zeros(0, 4)).is_err());
        assert!(brute_force_2partition(&Mat::zeros(13, 2)).is_err());
    }

    #[test]
    fn duplicated_points_collapse() {
        let pts = unit_rows(&vec![vec![1.0, 1.0]; 4]);
        let (labels, obj) = brute_force_2partition(&pts).unwrap();
        assert_eq!(obj, 0.0);
        assert_eq!(labels, vec![1; 4]);
        let km = kmeans2(&pts, &mut SeededRng::new(1), 10, 3).unwrap();
        assert_eq!(km.objective, 0.0);
        assert_eq!(km.c1, km.c2);
    }

    #[test]
    fn brute_force_singletons_for_two_points() {
        let pts = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (labels, obj) = brute_force_2partition(&pts).unwrap();
        assert_eq!(obj, 0.0);
        assert_eq!(labels, vec![1, 2]);
    }

    #[test]
    fn brute_force_collinear_split() {
        // Raw positions on e1; the objective is over the points as given.
        let pts = Mat::from_rows(&[[0.0, 0.0], [0.1, 0.0], [0.9, 0.0], [1.0, 0.0]]).unwrap();
        let (labels, obj) = brute_force_2partition(&pts).unwrap();
        assert_eq!(labels, vec![1, 1, 2, 2]);
        assert!((obj - 0.01).abs() < 1e-12);
    }

    #[test]
    fn lloyd_objective_never_increases() {
        let mut rng = SeededRng::new(9);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
            let pts = unit_rows(&rows);
            let km = kmeans2(&pts, &mut rng, DEFAULT_MAX_ITER, 4).unwrap();
            for w in km.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", km.history);
            }
        }
    }

    #[test]
    fn larger_cluster_is_labelled_one() {
        let pts = unit_rows(&[basis(2, 1), basis(2, 0), basis(2, 0), basis(2, 0)]);
        let km = kmeans2(&pts, &mut SeededRng::new(2), 10, 2).unwrap();
        assert_eq!(km.assignments, vec![2, 1, 1, 1]);
    }
}
