//! Scoring network: two FC modules (FC → ReLU → suppression → dropout) and a
//! sigmoid output layer, with a normalcy suppression module (NSM) beside each
//! FC module.
//!
//! An NSM is an FC layer followed by a softmax. Its probability matrix
//! multiplies the FC module's activations element-wise. NSM-1 reads the raw
//! batch and NSM-2 reads the (post-dropout) output of FC module 1. The
//! backward pass is written out by hand and mirrors `forward` step by step.

use serde::{Deserialize, Serialize};

use crate::dataio::{form_batches, VideoRecord};
use crate::error::{Error, Result};
use crate::numerics::{
    dropout_mask, sigmoid, softmax_over_spatial, softmax_over_spatial_backward, softmax_over_temporal,
    softmax_over_temporal_backward, unit_normalize_rows, Mat, SeededRng,
};

/// Scores are kept strictly inside (0, 1) even when the logit saturates.
const SCORE_MIN: f64 = f64::MIN_POSITIVE;
const SCORE_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// How an NSM's probabilities are formed and combined with the activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionMode {
    /// `b x z` probabilities, softmax down each column (over time).
    ElementwiseTemporal,
    /// One probability per segment (`b x 1`), softmax over time, broadcast
    /// across all channels.
    FeatureVector,
    /// `b x z` probabilities, softmax along each row (over channels).
    ElementwiseSpatial,
    /// `A ⊙ (1 + P)` with `P` as in `ElementwiseTemporal`.
    Residual,
    /// No suppression; the plain backbone.
    None,
}

impl SuppressionMode {
    pub const ALL: [SuppressionMode; 5] = [
        SuppressionMode::ElementwiseTemporal,
        SuppressionMode::FeatureVector,
        SuppressionMode::ElementwiseSpatial,
        SuppressionMode::Residual,
        SuppressionMode::None,
    ];

    pub fn tag(self) -> u32 {
        match self {
            SuppressionMode::ElementwiseTemporal => 0,
            SuppressionMode::FeatureVector => 1,
            SuppressionMode::ElementwiseSpatial => 2,
            SuppressionMode::Residual => 3,
            SuppressionMode::None => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    /// The snake_case name used in config files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            SuppressionMode::ElementwiseTemporal => "elementwise_temporal",
            SuppressionMode::FeatureVector => "feature_vector",
            SuppressionMode::ElementwiseSpatial => "elementwise_spatial",
            SuppressionMode::Residual => "residual",
            SuppressionMode::None => "none",
        }
    }

    fn nsm_width(self, hidden: usize) -> usize {
        match self {
            SuppressionMode::FeatureVector => 1,
            _ => hidden,
        }
    }
}

impl std::str::FromStr for SuppressionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown suppression mode {s:?} (expected one of {})", names.join(", ")))
        })
    }
}

/// Shape of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub d: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub mode: SuppressionMode,
}

impl Architecture {
    pub fn new(d: usize, mode: SuppressionMode) -> Self {
        Self { d, hidden1: 512, hidden2: 32, mode }
    }

    pub fn with_widths(self, hidden1: usize, hidden2: usize) -> Self {
        Self { hidden1, hidden2, ..self }
    }
}

/// One tensor per trainable quantity, in declaration (and serialization) order.
/// Used for parameters, gradients and optimizer accumulators alike. Biases are
/// `1 x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensors {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub w3: Mat,
    pub b3: Mat,
    pub wn1: Mat,
    pub bn1: Mat,
    pub wn2: Mat,
    pub bn2: Mat,
}

impl ParamTensors {
    pub const NAMES: [&'static str; 10] = ["w1", "b1", "w2", "b2", "w3", "b3", "wn1", "bn1", "wn2", "bn2"];

    pub fn zeros(arch: &Architecture) -> Self {
        let (d, h1, h2) = (arch.d, arch.hidden1, arch.hidden2);
        let (n1, n2) = (arch.mode.nsm_width(h1), arch.mode.nsm_width(h2));
        Self {
            w1: Mat::zeros(d, h1),
            b1: Mat::zeros(1, h1),
            w2: Mat::zeros(h1, h2),
            b2: Mat::zeros(1, h2),
            w3: Mat::zeros(h2, 1),
            b3: Mat::zeros(1, 1),
            wn1: Mat::zeros(d, n1),
            bn1: Mat::zeros(1, n1),
            wn2: Mat::zeros(h1, n2),
            bn2: Mat::zeros(1, n2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        Self {
            w1: z(&self.w1),
            b1: z(&self.b1),
            w2: z(&self.w2),
            b2: z(&self.b2),
            w3: z(&self.w3),
            b3: z(&self.b3),
            wn1: z(&self.wn1),
            bn1: z(&self.bn1),
            wn2: z(&self.wn2),
            bn2: z(&self.bn2),
        }
    }

    pub fn tensors(&self) -> [&Mat; 10] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.wn1, &self.bn1, &self.wn2, &self.bn2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Mat; 10] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.wn1,
            &mut self.bn1,
            &mut self.wn2,
            &mut self.bn2,
        ]
    }

    pub fn same_shapes(&self, other: &ParamTensors) -> bool {
        self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub tensors: ParamTensors,
}

/// Weights uniform in `±1/√fan_in`, biases zero.
pub fn init_params(arch: Architecture, rng: &mut SeededRng) -> Result<ModelParams> {
    if arch.d < 1 || arch.hidden1 < 1 || arch.hidden2 < 1 {
        return Err(Error::Config(format!("invalid architecture {arch:?}")));
    }
    let mut tensors = ParamTensors::zeros(&arch);
    for w in [&mut tensors.w1, &mut tensors.w2, &mut tensors.w3, &mut tensors.wn1, &mut tensors.wn2] {
        let bound = 1.0 / (w.rows() as f64).sqrt();
        for v in w.as_mut_slice() {
            *v = rng.uniform_range(-bound, bound);
        }
    }
    Ok(ModelParams { arch, tensors })
}

/// Per-call switches for [`forward`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Enables dropout.
    pub train: bool,
    pub dropout_rate: f64,
    /// A disabled NSM contributes an all-ones multiplier.
    pub nsm1: bool,
    pub nsm2: bool,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self { train: false, dropout_rate: 0.0, nsm1: true, nsm2: true }
    }

    pub fn train(dropout_rate: f64) -> Self {
        Self { train: true, dropout_rate, nsm1: true, nsm2: true }
    }

    pub fn with_nsm(self, nsm1: bool, nsm2: bool) -> Self {
        Self { nsm1, nsm2, ..self }
    }
}

/// Cached quantities of one FC module.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleTrace {
    /// Module input.
    pub input: Mat,
    /// FC pre-activation.
    pub pre: Mat,
    /// NSM probabilities (`None` when the NSM is inactive).
    pub probs: Option<Mat>,
    /// Multiplier applied to `relu(pre)`.
    pub multiplier: Mat,
    /// Post-suppression activation `relu(pre) ⊙ multiplier`.
    pub hidden: Mat,
    pub dropout: Option<Mat>,
    /// Module output (`hidden` after dropout).
    pub output: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub mode: SuppressionMode,
    pub module1: ModuleTrace,
    pub module2: ModuleTrace,
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
    /// Unit-normalized rows of module 1's `hidden` (dropout never applies).
    pub g: Mat,
    pub g_norms: Vec<f64>,
}

impl ForwardTrace {
    pub fn batch_len(&self) -> usize {
        self.scores.len()
    }
}

fn suppression(
    mode: SuppressionMode,
    active: bool,
    input: &Mat,
    wn: &Mat,
    bn: &Mat,
    width: usize,
) -> (Option<Mat>, Mat) {
    let n = input.rows();
    if !active || mode == SuppressionMode::None {
        return (None, Mat::ones(n, width));
    }
    let mut s = input.dot(wn);
    s.add_row_vector(bn.as_slice());
    match mode {
        SuppressionMode::ElementwiseTemporal => {
            let p = softmax_over_temporal(&s);
            (Some(p.clone()), p)
        }
        SuppressionMode::FeatureVector => {
            let p = softmax_over_temporal(&s);
            let mut mult = Mat::zeros(n, width);
            for r in 0..n {
                mult.row_mut(r).fill(p[(r, 0)]);
            }
            (Some(p), mult)
        }
        SuppressionMode::ElementwiseSpatial => {
            let p = softmax_over_spatial(&s);
            (Some(p.clone()), p)
        }
        SuppressionMode::Residual => {
            let p = softmax_over_temporal(&s);
            let mult = p.map(|v| 1.0 + v);
            (Some(p), mult)
        }
        SuppressionMode::None => unreachable!(),
    }
}

/// Gradient w.r.t. the NSM logits given the gradient w.r.t. the multiplier.
fn suppression_backward(mode: SuppressionMode, probs: &Mat, d_mult: &Mat) -> Mat {
    match mode {
        SuppressionMode::ElementwiseTemporal | SuppressionMode::Residual => {
            softmax_over_temporal_backward(probs, d_mult)
        }
        SuppressionMode::FeatureVector => {
            let d_p = Mat::column(&d_mult.row_sums());
            softmax_over_temporal_backward(probs, &d_p)
        }
        SuppressionMode::ElementwiseSpatial => softmax_over_spatial_backward(probs, d_mult),
        SuppressionMode::None => unreachable!("inactive suppression has no probabilities"),
    }
}

#[allow(clippy::too_many_arguments)]
fn module_forward(
    mode: SuppressionMode,
    input: &Mat,
    w: &Mat,
    b: &Mat,
    wn: &Mat,
    bn: &Mat,
    nsm_active: bool,
    dropout: Option<(f64, &mut SeededRng)>,
) -> Result<ModuleTrace> {
    let mut pre = input.dot(w);
    pre.add_row_vector(b.as_slice());
    let (probs, multiplier) = suppression(mode, nsm_active, input, wn, bn, w.cols());
    let hidden = pre.map(crate::numerics::relu).hadamard(&multiplier);
    let (dropout, output) = match dropout {
        Some((rate, rng)) if rate > 0.0 => {
            let mask = dropout_mask(hidden.rows(), hidden.cols(), rate, rng)?;
            let out = hidden.hadamard(&mask);
            (Some(mask), out)
        }
        _ => (None, hidden.clone()),
    };
    Ok(ModuleTrace { input: input.clone(), pre, probs, multiplier, hidden, dropout, output })
}

/// Runs a batch (`b' x d`) through the network, caching everything `backward`
/// needs.
pub fn forward(params: &ModelParams, batch: &Mat, opts: ForwardOptions, rng: &mut SeededRng) -> Result<ForwardTrace> {
    let t = &params.tensors;
    let mode = params.arch.mode;
    if batch.cols() != params.arch.d {
        return Err(Error::DimensionMismatch { expected: params.arch.d, found: batch.cols() });
    }
    if batch.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let drop = opts.train && opts.dropout_rate > 0.0;
    let module1 = module_forward(
        mode,
        batch,
        &t.w1,
        &t.b1,
        &t.wn1,
        &t.bn1,
        opts.nsm1,
        drop.then_some((opts.dropout_rate, &mut *rng)),
    )?;
    let module2 = module_forward(
        mode,
        &module1.output,
        &t.w2,
        &t.b2,
        &t.wn2,
        &t.bn2,
        opts.nsm2,
        drop.then_some((opts.dropout_rate, &mut *rng)),
    )?;
    let b3 = t.b3[(0, 0)];
    let logits: Vec<f64> = module2.output.dot(&t.w3).as_slice().iter().map(|z| z + b3).collect();
    let scores = logits.iter().map(|&z| sigmoid(z).clamp(SCORE_MIN, SCORE_MAX)).collect();
    let (g, g_norms) = unit_normalize_rows(&module1.hidden);
    Ok(ForwardTrace { mode, module1, module2, logits, scores, g, g_norms })
}

/// Backpropagates cotangents on the scores (`b'`) and, optionally, on `G`
/// (`b' x hidden1`) to every parameter.
pub fn backward(
    trace: &ForwardTrace,
    params: &ModelParams,
    d_scores: &[f64],
    d_g: Option<&Mat>,
) -> Result<ParamTensors> {
    let t = &params.tensors;
    let n = trace.batch_len();
    let mode = params.arch.mode;
    if trace.mode != mode
        || trace.module1.input.cols() != params.arch.d
        || trace.module1.pre.cols() != t.w1.cols()
        || trace.module2.pre.cols() != t.w2.cols()
    {
        return Err(Error::Shape("trace was not produced by these parameters".into()));
    }
    if d_scores.len() != n {
        return Err(Error::Shape(format!("{} score cotangents for a batch of {n}", d_scores.len())));
    }
    if let Some(dg) = d_g {
        if dg.shape() != trace.g.shape() {
            return Err(Error::Shape(format!("dL/dG is {:?}, G is {:?}", dg.shape(), trace.g.shape())));
        }
    }

    let mut grads = ParamTensors::zeros(&params.arch);

    // Output layer.
    let d_logits: Vec<f64> = d_scores
        .iter()
        .zip(&trace.logits)
        .map(|(ds, &z)| {
            let s = sigmoid(z);
            ds * s * (1.0 - s)
        })
        .collect();
    let d_logits = Mat::column(&d_logits);
    grads.w3 = trace.module2.output.t_dot(&d_logits);
    grads.b3[(0, 0)] = d_logits.sum();
    let d_out2 = d_logits.dot_t(&t.w3);

    let d_input2 = module_backward(
        mode,
        &trace.module2,
        d_out2,
        None,
        &t.w2,
        &t.wn2,
        (&mut grads.w2, &mut grads.b2, &mut grads.wn2, &mut grads.bn2),
    );

    // G = rows of module 1's hidden / their norms.
    let d_hidden1_from_g = d_g.map(|dg| {
        let mut dh = Mat::zeros(n, dg.cols());
        for r in 0..n {
            let norm = trace.g_norms[r];
            if norm == 0.0 {
                continue;
            }
            let (g, dgr) = (trace.g.row(r), dg.row(r));
            let proj = crate::numerics::dot(g, dgr);
            for (c, out) in dh.row_mut(r).iter_mut().enumerate() {
                *out = (dgr[c] - g[c] * proj) / norm;
            }
        }
        dh
    });

    module_backward(
        mode,
        &trace.module1,
        d_input2,
        d_hidden1_from_g,
        &t.w1,
        &t.wn1,
        (&mut grads.w1, &mut grads.b1, &mut grads.wn1, &mut grads.bn1),
    );
    Ok(grads)
}

/// Returns the gradient w.r.t. the module input.
fn module_backward(
    mode: SuppressionMode,
    m: &ModuleTrace,
    d_output: Mat,
    extra_d_hidden: Option<Mat>,
    w: &Mat,
    wn: &Mat,
    (gw, gb, gwn, gbn): (&mut Mat, &mut Mat, &mut Mat, &mut Mat),
) -> Mat {
    let mut d_hidden = match &m.dropout {
        Some(mask) => d_output.hadamard(mask),
        None => d_output,
    };
    if let Some(extra) = extra_d_hidden {
        d_hidden.add_assign(&extra);
    }
    // hidden = relu(pre) ⊙ multiplier
    let mut d_pre = d_hidden.hadamard(&m.multiplier);
    for (dp, &z) in d_pre.as_mut_slice().iter_mut().zip(m.pre.as_slice()) {
        if z <= 0.0 {
            *dp = 0.0;
        }
    }
    *gw = m.input.t_dot(&d_pre);
    *gb = Mat::from_vec(1, d_pre.cols(), d_pre.col_sums()).expect("bias shape");
    let mut d_input = d_pre.dot_t(w);

    if let Some(probs) = &m.probs {
        let d_mult = d_hidden.hadamard(&m.pre.map(crate::numerics::relu));
        let d_logits = suppression_backward(mode, probs, &d_mult);
        *gwn = m.input.t_dot(&d_logits);
        *gbn = Mat::from_vec(1, d_logits.cols(), d_logits.col_sums()).expect("bias shape");
        d_input.add_assign(&d_logits.dot_t(wn));
    }
    d_input
}

/// Evaluation-mode unit-normalized FC-1 representations (after NSM-1) for every
/// segment of `video`, computed batch by batch with batch size `batch_size`.
pub fn intermediate_repr(params: &ModelParams, video: &VideoRecord, batch_size: usize, nsm1: bool) -> Result<Mat> {
    let t = &params.tensors;
    if video.dim() != params.arch.d {
        return Err(Error::DimensionMismatch { expected: params.arch.d, found: video.dim() });
    }
    let mut parts = Vec::new();
    for batch in form_batches(video, 0, batch_size)? {
        let m1 = module_forward(params.arch.mode, &batch.rows, &t.w1, &t.b1, &t.wn1, &t.bn1, nsm1, None)?;
        parts.push(unit_normalize_rows(&m1.hidden).0);
    }
    Mat::vstack(&parts)
}

/// Evaluation-mode segment scores for a whole video, batch by batch.
pub fn score_video(
    params: &ModelParams,
    video: &VideoRecord,
    batch_size: usize,
    opts: ForwardOptions,
) -> Result<Vec<f64>> {
    let opts = ForwardOptions { train: false, ..opts };
    let mut rng = SeededRng::new(0);
    let mut scores = Vec::with_capacity(video.segments());
    for batch in form_batches(video, 0, batch_size)? {
        scores.extend(forward(params, &batch.rows, opts, &mut rng)?.scores);
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Label;
    use crate::numerics::{finite_diff_grad, relative_error};

    fn tiny(mode: SuppressionMode, seed: u64) -> ModelParams {
        let arch = Architecture::new(8, mode).with_widths(6, 4);
        let mut p = init_params(arch, &mut SeededRng::new(seed)).unwrap();
        // Nonzero biases exercise the bias paths.
        let mut rng = SeededRng::new(seed + 100);
        for b in [&mut p.tensors.b1, &mut p.tensors.b2, &mut p.tensors.b3, &mut p.tensors.bn1, &mut p.tensors.bn2] {
            b.map_inplace(|_| 0.0);
            for v in b.as_mut_slice() {
                *v = rng.uniform_range(-0.3, 0.3);
            }
        }
        p
    }

    fn random_mat(r: usize, c: usize, rng: &mut SeededRng) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn mode_names_match_serde() {
        for mode in SuppressionMode::ALL {
            assert_eq!(serde_json::to_string(&mode).unwrap(), format!("\"{}\"", mode.name()));
            assert_eq!(mode.name().parse::<SuppressionMode>().unwrap(), mode);
            assert_eq!(SuppressionMode::from_tag(mode.tag()), Some(mode));
        }
        assert!("temporal".parse::<SuppressionMode>().is_err());
    }

    #[test]
    fn init_shapes_and_bounds() {
        let p =
            init_params(Architecture::new(8, SuppressionMode::ElementwiseTemporal), &mut SeededRng::new(1)).unwrap();
        assert_eq!(p.tensors.w1.shape(), (8, 512));
        assert!(p.tensors.w1.max_abs() <= 1.0 / 8f64.sqrt());
        assert_eq!(p.tensors.b1.max_abs(), 0.0);
        let q =
            init_params(Architecture::new(8, SuppressionMode::ElementwiseTemporal), &mut SeededRng::new(1)).unwrap();
        assert_eq!(p, q);
        let fv = init_params(Architecture::new(8, SuppressionMode::FeatureVector), &mut SeededRng::new(1)).unwrap();
        assert_eq!(fv.tensors.wn1.shape(), (8, 1));
        assert_eq!(fv.tensors.wn2.shape(), (512, 1));
        assert!(init_params(Architecture::new(0, SuppressionMode::None), &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn zero_model_scores_half() {
        let arch = Architecture::new(5, SuppressionMode::None).with_widths(6, 4);
        let p = ModelParams { arch, tensors: ParamTensors::zeros(&arch) };
        let x = random_mat(7, 5, &mut SeededRng::new(3));
        let tr = forward(&p, &x, ForwardOptions::eval(), &mut SeededRng::new(0)).unwrap();
        assert!(tr.scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn single_row_temporal_softmax_is_identity() {
        let p = tiny(SuppressionMode::ElementwiseTemporal, 4);
        let x = random_mat(1, 8, &mut SeededRng::new(9));
        let tr = forward(&p, &x, ForwardOptions::eval(), &mut SeededRng::new(0)).unwrap();
        assert!(tr.module1.probs.as_ref().unwrap().as_slice().iter().all(|&v| v == 1.0));
        assert_eq!(tr.module1.hidden, tr.module1.pre.map(crate::numerics::relu));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = tiny(SuppressionMode::None, 1);
        let x = Mat::zeros(3, 7);
        assert!(matches!(
            forward(&p, &x, ForwardOptions::eval(), &mut SeededRng::new(0)),
            Err(Error::DimensionMismatch { expected: 8, found: 7 })
        ));
    }

    #[test]
    fn scores_stay_open_interval_for_large_inputs() {
        for mode in SuppressionMode::ALL {
            let p = tiny(mode, 2);
            let x = random_mat(6, 8, &mut SeededRng::new(2)).scale(1e3 / 3.0);
            let x = x.map(|v| v.clamp(-1e3, 1e3));
            let tr = forward(&p, &x, ForwardOptions::eval(), &mut SeededRng::new(0)).unwrap();
            assert!(tr.scores.iter().all(|&s| s > 0.0 && s < 1.0), "{mode:?}");
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        for mode in SuppressionMode::ALL {
            let p = tiny(mode, 6);
            let x = random_mat(5, 8, &mut SeededRng::new(1));
            let tr = forward(&p, &x, ForwardOptions::eval(), &mut SeededRng::new(0)).unwrap();
            let g = backward(&tr, &p, &[0.0; 5], Some(&Mat::zeros(5, 6))).unwrap();
            assert!(g.tensors().iter().all(|t| t.max_abs() == 0.0));
        }
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let p = tiny(SuppressionMode::ElementwiseTemporal, 1);
        let q = tiny(SuppressionMode::Residual, 1);
        let x = random_mat(3, 8, &mut SeededRng::new(1));
        let tr = forward(&p, &x, ForwardOptions::eval(), &mut SeededRng::new(0)).unwrap();
        assert!(backward(&tr, &q, &[0.0; 3], None).is_err());
        assert!(backward(&tr, &p, &[0.0; 2], None).is_err());
    }

    const GRAD_FLOOR: f64 = 1e-4;

    /// Finite-difference check with the linear functional
    /// `L = Σ a_l ŷ_l + Σ B ⊙ G`.
    fn check_linear_functional(mode: SuppressionMode, opts: ForwardOptions, seed: u64) {
        let p = tiny(mode, seed);
        let mut rng = SeededRng::new(seed + 7);
        let x = random_mat(5, 8, &mut rng);
        let a: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let bmat = random_mat(5, 6, &mut rng);
        let loss = |params: &ModelParams| {
            let tr = forward(params, &x, opts, &mut SeededRng::new(0)).unwrap();
            tr.scores.iter().zip(&a).map(|(s, w)| s * w).sum::<f64>() + tr.g.hadamard(&bmat).sum()
        };
        let tr = forward(&p, &x, opts, &mut SeededRng::new(0)).unwrap();
        let grads = backward(&tr, &p, &a, Some(&bmat)).unwrap();
        for (i, name) in ParamTensors::NAMES.iter().enumerate() {
            let numeric = finite_diff_grad(
                |m| {
                    let mut q = p.clone();
                    *q.tensors.tensors_mut()[i] = m.clone();
                    loss(&q)
                },
                p.tensors.tensors()[i],
                1e-6,
            );
            let err = relative_error(grads.tensors()[i], &numeric, GRAD_FLOOR);
            assert!(err < 1e-5, "{mode:?} {name}: rel err {err}");
        }
    }

    #[test]
    fn backward_matches_finite_differences_all_modes() {
        for mode in SuppressionMode::ALL {
            for seed in 0..3 {
                check_linear_functional(mode, ForwardOptions::eval(), seed);
            }
        }
    }

    #[test]
    fn backward_with_disabled_nsm_matches_finite_differences() {
        check_linear_functional(SuppressionMode::ElementwiseTemporal, ForwardOptions::eval().with_nsm(false, true), 1);
        check_linear_functional(SuppressionMode::FeatureVector, ForwardOptions::eval().with_nsm(true, false), 2);
    }

    #[test]
    fn backward_with_fixed_dropout_matches_finite_differences() {
        // The dropout stream restarts from the same seed inside `loss`, so the
        // masks are identical across probes.
        check_linear_functional(SuppressionMode::ElementwiseTemporal, ForwardOptions::train(0.3), 5);
    }

    #[test]
    fn uniform_suppression_reduces_to_rescaled_backbone() {
        // With zero NSM weights P = 1/b' everywhere, so a temporal model equals a
        // plain model whose W2 and W3 are divided by b'.
        let n = 5.0;
        let mut temporal = tiny(SuppressionMode::ElementwiseTemporal, 11);
        for t in
            [&mut temporal.tensors.wn1, &mut temporal.tensors.bn1, &mut temporal.tensors.wn2, &mut temporal.tensors.bn2]
        {
            t.map_inplace(|_| 0.0);
        }
        let mut plain = temporal.clone();
        plain.arch.mode = SuppressionMode::None;
        plain.tensors.w2 = temporal.tensors.w2.scale(1.0 / n);
        plain.tensors.w3 = temporal.tensors.w3.scale(1.0 / n);

        let mut rng = SeededRng::new(12);
        let x = random_mat(5, 8, &mut rng);
        let ds: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let dg = random_mat(5, 6, &mut rng);
        let opts = ForwardOptions::eval();
        let tt = forward(&temporal, &x, opts, &mut SeededRng::new(0)).unwrap();
        let tp = forward(&plain, &x, opts, &mut SeededRng::new(0)).unwrap();
        for (a, b) in tt.scores.iter().zip(&tp.scores) {
            assert!((a - b).abs() < 1e-12);
        }
        let gt = backward(&tt, &temporal, &ds, Some(&dg)).unwrap();
        let gp = backward(&tp, &plain, &ds, Some(&dg)).unwrap();
        let close = |a: &Mat, b: &Mat| a.sub(b).max_abs() <= 1e-12 * (1.0 + b.max_abs());
        assert!(close(&gt.w1, &gp.w1));
        assert!(close(&gt.b1, &gp.b1));
        assert!(close(&gt.w2, &gp.w2.scale(1.0 / n)));
        assert!(close(&gt.b2, &gp.b2));
        assert!(close(&gt.w3, &gp.w3.scale(1.0 / n)));
        assert!(close(&gt.b3, &gp.b3));
    }

    #[test]
    fn suppression_commutes_with_relu() {
        let mut rng = SeededRng::new(21);
        for _ in 0..20 {
            let a = random_mat(6, 5, &mut rng);
            let p = softmax_over_temporal(&random_mat(6, 5, &mut rng));
            let left = a.map(crate::numerics::relu).hadamard(&p);
            let right = a.hadamard(&p).map(crate::numerics::relu);
            assert!(left.sub(&right).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn temporal_probabilities_are_column_stochastic() {
        let p = tiny(SuppressionMode::ElementwiseTemporal, 3);
        let x = random_mat(7, 8, &mut SeededRng::new(4));
        let tr = forward(&p, &x, ForwardOptions::eval(), &mut SeededRng::new(0)).unwrap();
        for probs in [tr.module1.probs.unwrap(), tr.module2.probs.unwrap()] {
            assert!(probs.col_sums().iter().all(|s| (s - 1.0).abs() <= 1e-12));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let p = tiny(SuppressionMode::Residual, 8);
        let x = random_mat(6, 8, &mut SeededRng::new(1));
        let a = forward(&p, &x, ForwardOptions::train(0.5), &mut SeededRng::new(77)).unwrap();
        let b = forward(&p, &x, ForwardOptions::train(0.5), &mut SeededRng::new(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn g_ignores_dropout() {
        let p = tiny(SuppressionMode::ElementwiseTemporal, 8);
        let x = random_mat(6, 8, &mut SeededRng::new(1));
        let a = forward(&p, &x, ForwardOptions::train(0.5), &mut SeededRng::new(1)).unwrap();
        let b = forward(&p, &x, ForwardOptions::eval(), &mut SeededRng::new(1)).unwrap();
        assert_eq!(a.g, b.g);
    }

    fn video(features: Mat) -> VideoRecord {
        VideoRecord {
            video_id: "v".into(),
            label: Label::Normal,
            frame_count: features.rows() * 16,
            features,
            frame_gt: None,
        }
    }

    #[test]
    fn intermediate_repr_rows_are_unit_or_zero() {
        let p = tiny(SuppressionMode::ElementwiseTemporal, 5);
        let v = video(random_mat(11, 8, &mut SeededRng::new(3)));
        let g = intermediate_repr(&p, &v, 4, true).unwrap();
        assert_eq!(g.shape(), (11, 6));
        for row in g.row_iter() {
            let n = crate::numerics::norm(row);
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }
        let single = intermediate_repr(&p, &video(random_mat(1, 8, &mut SeededRng::new(4))), 4, true).unwrap();
        assert_eq!(single.shape(), (1, 6));
    }

    #[test]
    fn intermediate_repr_duplicates_rows() {
        let p = tiny(SuppressionMode::ElementwiseTemporal, 5);
        let row = random_mat(1, 8, &mut SeededRng::new(3));
        let v = video(Mat::vstack(&[row.clone(), row.clone(), row]).unwrap());
        let g = intermediate_repr(&p, &v, 4, true).unwrap();
        assert_eq!(g.row(0), g.row(1));
        assert_eq!(g.row(1), g.row(2));
    }

    #[test]
    fn intermediate_repr_matches_forward_g() {
        let p = tiny(SuppressionMode::FeatureVector, 5);
        let v = video(random_mat(4, 8, &mut SeededRng::new(3)));
        let g = intermediate_repr(&p, &v, 4, true).unwrap();
        let tr = forward(&p, &v.features, ForwardOptions::eval(), &mut SeededRng::new(0)).unwrap();
        assert_eq!(g, tr.g);
    }
}
