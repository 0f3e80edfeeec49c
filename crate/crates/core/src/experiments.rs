//! Ablation presets, hyperparameter sweeps and one-shot train-and-evaluate
//! runs on a synthetic benchmark.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataio::{synth_videos, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalOptions, Metrics};
use crate::model::SuppressionMode;
use crate::trainer::{train, TrainConfig};

/// One switch that removes a component from the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    DisableRbs,
    DisableNsm1,
    DisableNsm2,
    NoAuxLosses,
    NoClusterLoss,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Self::DisableRbs, Self::DisableNsm1, Self::DisableNsm2, Self::NoAuxLosses, Self::NoClusterLoss];

    pub fn token(self) -> &'static str {
        match self {
            Self::DisableRbs => "disable-rbs",
            Self::DisableNsm1 => "disable-nsm1",
            Self::DisableNsm2 => "disable-nsm2",
            Self::NoAuxLosses => "no-aux-losses",
            Self::NoClusterLoss => "no-cluster-loss",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Self::DisableRbs => cfg.use_rbs = false,
            Self::DisableNsm1 => cfg.use_nsm1 = false,
            Self::DisableNsm2 => cfg.use_nsm2 = false,
            Self::NoAuxLosses => cfg.use_ts_s_losses = false,
            Self::NoClusterLoss => cfg.use_cluster_loss = false,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.token() == s).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|a| a.token()).collect();
            Error::Config(format!("unknown ablation {s:?} (expected one of {})", known.join(", ")))
        })
    }
}

/// Parses a comma-separated ablation list; blank entries are ignored.
pub fn parse_ablations(list: &str) -> Result<Vec<Ablation>> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

pub fn apply_ablations(cfg: &mut TrainConfig, ablations: &[Ablation]) {
    ablations.iter().for_each(|a| a.apply(cfg));
}

/// The incremental configurations of the bottom-up ablation, from the bare
/// backbone to the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Backbone, sequential batches, regression loss only.
    Backbone,
    /// Adds random batch selection.
    BackboneRbs,
    /// Adds both suppression modules.
    BackboneRbsNsm,
    /// Adds the smoothness, sparsity and clustering losses.
    Full,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Self::Backbone, Self::BackboneRbs, Self::BackboneRbsNsm, Self::Full];

    pub fn name(self) -> &'static str {
        match self {
            Self::Backbone => "backbone",
            Self::BackboneRbs => "backbone+rbs",
            Self::BackboneRbsNsm => "backbone+rbs+nsm",
            Self::Full => "full",
        }
    }

    pub fn ablations(self) -> &'static [Ablation] {
        use Ablation::*;
        match self {
            Self::Backbone => &[DisableRbs, DisableNsm1, DisableNsm2, NoAuxLosses, NoClusterLoss],
            Self::BackboneRbs => &[DisableNsm1, DisableNsm2, NoAuxLosses, NoClusterLoss],
            Self::BackboneRbsNsm => &[NoAuxLosses, NoClusterLoss],
            Self::Full => &[],
        }
    }

    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        apply_ablations(&mut cfg, self.ablations());
        cfg
    }
}

/// Hyperparameters a sweep may vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepParam {
    Alpha,
    Beta,
    Lambda1,
    Lambda2,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Beta => "beta",
            Self::Lambda1 => "lambda1",
            Self::Lambda2 => "lambda2",
        }
    }

    pub fn set(self, cfg: &mut TrainConfig, value: f64) {
        let w = &mut cfg.loss;
        match self {
            Self::Alpha => w.alpha = value,
            Self::Beta => w.beta = value,
            Self::Lambda1 => w.lambda1 = value,
            Self::Lambda2 => w.lambda2 = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "beta" => Ok(Self::Beta),
            "lambda1" => Ok(Self::Lambda1),
            "lambda2" => Ok(Self::Lambda2),
            _ => {
                Err(Error::Config(format!("unknown sweep parameter {s:?} (expected alpha, beta, lambda1 or lambda2)")))
            }
        }
    }
}

/// Learning rate of the short benchmark recipe.
pub const BENCHMARK_LR: f64 = 5e-4;
/// Batch size of the short benchmark recipe.
pub const BENCHMARK_BATCH_SIZE: usize = 16;

/// Training settings for the short desk-scale benchmark runs: the default
/// recipe compressed to `iterations`, with a larger learning rate, batches of
/// 16 segments, and the learning-rate drop kept at the same relative position.
pub fn benchmark_config(iterations: u64, seed: u64) -> TrainConfig {
    let base = TrainConfig::default();
    TrainConfig {
        iterations,
        lr: BENCHMARK_LR,
        lr_drop_iter: iterations * base.lr_drop_iter / base.iterations,
        batch_size: BENCHMARK_BATCH_SIZE,
        seed,
        ..base
    }
}

/// Train and test splits generated from one synthetic config and seed.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: Dataset,
    pub test: Dataset,
}

impl Benchmark {
    pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Self> {
        let data = synth_videos(cfg, seed)?;
        Ok(Self { train: data.train_dataset(cfg.segment_len)?, test: data.test_dataset(cfg.segment_len)? })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub metrics: Metrics,
    pub elapsed: Duration,
}

/// Trains on the benchmark's train split and evaluates on its test split.
pub fn run(bench: &Benchmark, cfg: &TrainConfig) -> Result<RunResult> {
    let start = Instant::now();
    let (params, _) = train(&bench.train, cfg.clone())?;
    let report = evaluate(&params, &bench.test, &EvalOptions::for_config(cfg))?;
    Ok(RunResult { metrics: report.metrics, elapsed: start.elapsed() })
}

/// One row of a sweep: the swept value and the resulting test AUC.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub auc: f64,
}

/// Trains one model per grid value, everything else fixed.
pub fn sweep(bench: &Benchmark, base: &TrainConfig, param: SweepParam, grid: &[f64]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    grid.iter()
        .map(|&value| {
            let mut cfg = base.clone();
            param.set(&mut cfg, value);
            Ok(SweepRow { value, auc: run(bench, &cfg)?.metrics.auc })
        })
        .collect()
}

/// Configuration of a suppression variant: the given mode with both modules
/// on, or no suppression at all for [`SuppressionMode::None`].
pub fn variant_config(base: &TrainConfig, mode: SuppressionMode) -> TrainConfig {
    TrainConfig { mode, ..base.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_tokens_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.token().parse::<Ablation>().unwrap(), a);
        }
        let all = parse_ablations("disable-rbs,disable-nsm1,disable-nsm2,no-aux-losses,no-cluster-loss").unwrap();
        let mut cfg = TrainConfig::default();
        apply_ablations(&mut cfg, &all);
        assert_eq!(cfg, TrainConfig::default().backbone_only());
        assert!(parse_ablations("disable-rbs,bogus").is_err());
        assert!(parse_ablations("").unwrap().is_empty());
    }

    #[test]
    fn stages_are_nested() {
        let base = TrainConfig::default();
        assert_eq!(Stage::Backbone.configure(&base), base.clone().backbone_only());
        let rbs = Stage::BackboneRbs.configure(&base);
        assert!(rbs.use_rbs && !rbs.use_nsm1 && !rbs.use_cluster_loss);
        let nsm = Stage::BackboneRbsNsm.configure(&base);
        assert!(nsm.use_nsm1 && nsm.use_nsm2 && !nsm.use_ts_s_losses);
        assert_eq!(Stage::Full.configure(&base), base);
    }

    #[test]
    fn sweep_params_parse_and_set() {
        let mut cfg = TrainConfig::default();
        for (name, v) in [("alpha", 0.3), ("beta", 0.1), ("lambda1", 1e-3), ("lambda2", 2e-3)] {
            name.parse::<SweepParam>().unwrap().set(&mut cfg, v);
        }
        assert_eq!((cfg.loss.alpha, cfg.loss.beta, cfg.loss.lambda1, cfg.loss.lambda2), (0.3, 0.1, 1e-3, 2e-3));
        assert!("gamma".parse::<SweepParam>().is_err());
    }

    #[test]
    fn benchmark_config_scales_drop() {
        let cfg = benchmark_config(5000, 3);
        assert_eq!((cfg.iterations, cfg.lr_drop_iter, cfg.seed), (5000, 4000, 3));
        assert_eq!((cfg.lr, cfg.batch_size), (BENCHMARK_LR, BENCHMARK_BATCH_SIZE));
    }

    #[test]
    fn empty_grid_rejected() {
        let small = SynthConfig {
            d: 4,
            n_normal: 1,
            n_anomalous: 1,
            segments_per_video: 8,
            n_test_normal: 1,
            n_test_anomalous: 1,
            ..SynthConfig::default()
        };
        let bench = Benchmark::generate(&small, 0).unwrap();
        assert!(sweep(&bench, &TrainConfig::default(), SweepParam::Alpha, &[]).is_err());
    }
}
