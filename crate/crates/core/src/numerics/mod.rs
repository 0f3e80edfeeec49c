//! Numeric substrate: dense matrices, pointwise kernels, seeded randomness and
//! the finite-difference gradient checker.

mod gradcheck;
mod mat;
mod rng;

pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error};
pub use mat::{
    dot, matmul, norm, relu, relu_mat, sigmoid, sigmoid_mat, softmax_inplace, softmax_over_spatial,
    softmax_over_spatial_backward, softmax_over_temporal, softmax_over_temporal_backward, unit_normalize,
    unit_normalize_rows, Mat,
};
pub use rng::{dropout_mask, RngState, SeededRng};
