use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::SuppressionMode;

/// Everything that determines a training run. Serialized as JSON; every field
/// has a default so a config file may list only the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub lr: f64,
    pub lr_drop_iter: u64,
    pub lr_drop_factor: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub loss: LossWeights,
    pub mode: SuppressionMode,
    pub hidden1: usize,
    pub hidden2: usize,
    pub seed: u64,
    pub use_rbs: bool,
    pub use_nsm1: bool,
    pub use_nsm2: bool,
    pub use_ts_s_losses: bool,
    pub use_cluster_loss: bool,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    /// A log row is kept every `log_interval` iterations (and for the last one).
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            lr: 1e-4,
            lr_drop_iter: 80_000,
            lr_drop_factor: 10.0,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            batch_size: 32,
            dropout_rate: 0.5,
            loss: LossWeights::default(),
            mode: SuppressionMode::ElementwiseTemporal,
            hidden1: 512,
            hidden2: 32,
            seed: 0,
            use_rbs: true,
            use_nsm1: true,
            use_nsm2: true,
            use_ts_s_losses: true,
            use_cluster_loss: true,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            kmeans_restarts: DEFAULT_RESTARTS,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Learning rate in effect at `iteration` (0-based).
    pub fn lr_at(&self, iteration: u64) -> f64 {
        if iteration < self.lr_drop_iter {
            self.lr
        } else {
            self.lr / self.lr_drop_factor
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.iterations == 0 {
            return fail("iterations must be > 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be > 0");
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor.is_finite()) {
            return fail("lr_drop_factor must be > 0");
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || self.rmsprop_eps.is_nan() || self.rmsprop_eps <= 0.0 {
            return fail("rmsprop_decay must lie in [0, 1) and rmsprop_eps must be > 0");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be >= 2");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must lie in [0, 1)");
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return fail("hidden widths must be > 0");
        }
        if self.kmeans_max_iter == 0 || self.kmeans_restarts == 0 {
            return fail("kmeans_max_iter and kmeans_restarts must be > 0");
        }
        if self.log_interval == 0 {
            return fail("log_interval must be > 0");
        }
        self.loss.validate()
    }

    /// The backbone-only configuration: no batch shuffling, no suppression,
    /// regression loss only.
    pub fn backbone_only(mut self) -> Self {
        self.use_rbs = false;
        self.use_nsm1 = false;
        self.use_nsm2 = false;
        self.use_ts_s_losses = false;
        self.use_cluster_loss = false;
        self
    }
}
