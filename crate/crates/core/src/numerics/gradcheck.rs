//! Central finite differences, used as the independent oracle for every
//! hand-written backward pass.

use super::mat::{norm, Mat};

/// `(f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)` for every entry `i` of `x`.
pub fn finite_diff_grad(f: impl Fn(&Mat) -> f64, x: &Mat, eps: f64) -> Mat {
    let mut probe = x.clone();
    let mut grad = Mat::zeros(x.rows(), x.cols());
    for i in 0..x.as_slice().len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + eps;
        let plus = f(&probe);
        probe.as_mut_slice()[i] = orig - eps;
        let minus = f(&probe);
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Norm-wise relative error `‖a - n‖ / max(‖a‖, ‖n‖, floor)`.
///
/// Some gradients are identically zero (a bias under a column softmax, for
/// instance); `floor` keeps finite-difference round-off on those from reading
/// as a relative error of 1.
pub fn relative_error(analytic: &Mat, numeric: &Mat, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let diff = analytic.sub(numeric);
    let scale = norm(analytic.as_slice()).max(norm(numeric.as_slice())).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        norm(diff.as_slice()) / scale
    }
}

/// Largest entrywise relative error `|a - n| / max(|a|, |n|, floor)`.
///
/// `floor` keeps entries whose true gradient is ~0 from dominating through
/// round-off in the numerator.
pub fn max_relative_error(analytic: &Mat, numeric: &Mat, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
