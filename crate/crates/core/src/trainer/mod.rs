//! The training loop: batch selection, per-epoch cluster refresh, loss
//! composition, backpropagation and RMSProp updates, plus logging and
//! checkpoints.

mod checkpoint;
mod config;
mod optim;

use std::fmt::Write as _;
use std::path::Path;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TrainState, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::TrainConfig;
pub use optim::RmsProp;

use crate::clustering::{refresh_clusters, ClusterMap, RefreshOptions};
use crate::dataio::{form_batches, Batch, Dataset, Label, RandomBatchSelector};
use crate::error::{Error, Result};
use crate::losses::{total_loss, ClusterContext, LossBreakdown, LossWeights};
use crate::model::{backward, forward, init_params, Architecture, ForwardOptions, ModelParams};
use crate::numerics::SeededRng;

const INIT_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const SELECTOR_SALT: u64 = 0x5E1E_C7A5_D00D_F00D;
const CLUSTER_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// One logged iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_reg: f64,
    pub loss_ts: f64,
    pub loss_s: f64,
    pub loss_c: f64,
    pub epoch: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "iter,lr,loss_total,loss_reg,loss_ts,loss_s,loss_c,epoch";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter, r.lr, r.loss_total, r.loss_reg, r.loss_ts, r.loss_s, r.loss_c, r.epoch
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Outcome of a single iteration.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub iteration: u64,
    pub epoch: u64,
    pub lr: f64,
    pub ends_epoch: bool,
    pub loss: LossBreakdown,
}

/// Owns the parameters and all mutable training state for one run.
#[derive(Debug)]
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    batches: Vec<Batch>,
    params: ModelParams,
    optimizer: RmsProp,
    selector: RandomBatchSelector,
    dropout_rng: SeededRng,
    clusters: Option<ClusterMap>,
    iteration: u64,
    refreshes: u64,
    log: TrainingLog,
}

fn all_batches(dataset: &Dataset, b: usize) -> Result<Vec<Batch>> {
    let mut out = Vec::new();
    for (i, video) in dataset.videos.iter().enumerate() {
        out.extend(form_batches(video, i, b)?);
    }
    Ok(out)
}

fn check_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    if dataset.videos.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if config.use_cluster_loss && (dataset.count(Label::Normal) == 0 || dataset.count(Label::Anomalous) == 0) {
        return Err(Error::Dataset(
            "the clustering loss needs at least one normal and one anomalous training video".into(),
        ));
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    /// Initializes parameters from the seed and performs the initial cluster
    /// refresh (when the clustering loss is on).
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_dataset(dataset, &config)?;
        let batches = all_batches(dataset, config.batch_size)?;
        let arch = Architecture::new(dataset.dim(), config.mode).with_widths(config.hidden1, config.hidden2);
        let params = init_params(arch, &mut SeededRng::with_stream(config.seed, INIT_STREAM))?;
        let optimizer = RmsProp::new(&params.tensors, config.rmsprop_decay, config.rmsprop_eps);
        let selector = if config.use_rbs {
            RandomBatchSelector::new(batches.len(), config.seed ^ SELECTOR_SALT)
        } else {
            RandomBatchSelector::sequential(batches.len())
        };
        let mut trainer = Self {
            dataset,
            dropout_rng: SeededRng::with_stream(config.seed, DROPOUT_STREAM),
            config,
            batches,
            params,
            optimizer,
            selector,
            clusters: None,
            iteration: 0,
            refreshes: 0,
            log: TrainingLog::default(),
        };
        if trainer.config.use_cluster_loss {
            trainer.refresh()?;
        }
        Ok(trainer)
    }

    /// Continues a run from a checkpoint taken with [`Trainer::checkpoint`] on
    /// the same dataset.
    pub fn resume(dataset: &'a Dataset, ckpt: Checkpoint) -> Result<Self> {
        let Checkpoint { config, params, state } = ckpt;
        let state = state.ok_or_else(|| Error::Config("checkpoint carries no training state".into()))?;
        config.validate()?;
        check_dataset(dataset, &config)?;
        if params.arch.d != dataset.dim() {
            return Err(Error::DimensionMismatch { expected: params.arch.d, found: dataset.dim() });
        }
        let batches = all_batches(dataset, config.batch_size)?;
        if state.selector.order.len() != batches.len() {
            return Err(Error::Config(format!(
                "checkpoint was taken over {} batches, dataset has {}",
                state.selector.order.len(),
                batches.len()
            )));
        }
        if state.clusters.is_some() != config.use_cluster_loss {
            return Err(Error::Config("cluster states do not match the clustering-loss setting".into()));
        }
        Ok(Self {
            dataset,
            config,
            batches,
            params,
            optimizer: state.optimizer,
            selector: RandomBatchSelector::from_state(state.selector)?,
            dropout_rng: SeededRng::from_state(state.dropout_rng),
            clusters: state.clusters,
            iteration: state.iteration,
            refreshes: state.refreshes,
            log: TrainingLog::default(),
        })
    }

    fn refresh(&mut self) -> Result<()> {
        let opts = RefreshOptions {
            batch_size: self.config.batch_size,
            nsm1: self.config.use_nsm1,
            max_iter: self.config.kmeans_max_iter,
            restarts: self.config.kmeans_restarts,
            seed: self.config.seed ^ CLUSTER_SALT,
            round: self.refreshes,
        };
        self.clusters = Some(refresh_clusters(&self.params, self.dataset, opts)?);
        self.refreshes += 1;
        Ok(())
    }

    fn effective_weights(&self) -> LossWeights {
        let mut w = self.config.loss;
        if !self.config.use_ts_s_losses {
            w.lambda1 = 0.0;
        }
        if !self.config.use_cluster_loss {
            w.lambda2 = 0.0;
        }
        w
    }

    /// Runs one iteration. After an iteration that completes an epoch, the
    /// clusters are refreshed with the updated parameters.
    pub fn step(&mut self) -> Result<StepReport> {
        let cfg = &self.config;
        let iteration = self.iteration;
        let draw = self.selector.next_draw();
        let batch = &self.batches[draw.index];
        let opts =
            ForwardOptions { train: true, dropout_rate: cfg.dropout_rate, nsm1: cfg.use_nsm1, nsm2: cfg.use_nsm2 };
        let trace = forward(&self.params, &batch.rows, opts, &mut self.dropout_rng)?;
        let ctx = match &self.clusters {
            Some(map) => {
                let state =
                    map.get(&batch.video_id).ok_or_else(|| Error::MissingClusterState(batch.video_id.clone()))?;
                Some(ClusterContext { state, start_segment: batch.start_segment })
            }
            None => None,
        };
        let loss = total_loss(&trace.scores, &trace.g, batch.label, ctx, &self.effective_weights())?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        let d_g = ctx.is_some().then_some(&loss.d_g);
        let grads = backward(&trace, &self.params, &loss.d_scores, d_g)?;
        let lr = cfg.lr_at(iteration);
        self.optimizer.step(&mut self.params.tensors, &grads, lr)?;
        self.iteration += 1;

        let cfg = &self.config;
        if iteration.is_multiple_of(cfg.log_interval) || self.iteration == cfg.iterations {
            self.log.rows.push(LogRow {
                iter: iteration,
                lr,
                loss_total: loss.total,
                loss_reg: loss.reg,
                loss_ts: loss.ts,
                loss_s: loss.sparsity,
                loss_c: loss.cluster,
                epoch: draw.epoch,
            });
        }
        if draw.ends_epoch && cfg.use_cluster_loss {
            self.refresh()?;
        }
        Ok(StepReport { iteration, epoch: draw.epoch, lr, ends_epoch: draw.ends_epoch, loss })
    }

    /// Steps until `iteration` iterations have completed (or the configured
    /// total, whichever is smaller).
    pub fn run_until(&mut self, iteration: u64) -> Result<()> {
        let stop = iteration.min(self.config.iterations);
        while self.iteration < stop {
            self.step()?;
        }
        Ok(())
    }

    /// Trains to the configured number of iterations.
    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.iterations)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            state: Some(TrainState {
                iteration: self.iteration,
                refreshes: self.refreshes,
                optimizer: self.optimizer.clone(),
                dropout_rng: self.dropout_rng.state(),
                selector: self.selector.state(),
                clusters: self.clusters.clone(),
            }),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn epoch(&self) -> u64 {
        self.selector.epoch()
    }

    /// Number of cluster refreshes so far, including the initial one.
    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    pub fn clusters(&self) -> Option<&ClusterMap> {
        self.clusters.as_ref()
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn into_parts(self) -> (ModelParams, TrainingLog) {
        (self.params, self.log)
    }
}

/// Trains a model from scratch for `config.iterations` iterations.
pub fn train(dataset: &Dataset, config: TrainConfig) -> Result<(ModelParams, TrainingLog)> {
    let mut trainer = Trainer::new(dataset, config)?;
    trainer.run()?;
    Ok(trainer.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_videos, SynthConfig};
    use crate::model::SuppressionMode;

    fn small_data() -> Dataset {
        let cfg = SynthConfig { d: 6, n_normal: 2, n_anomalous: 2, segments_per_video: 10, ..SynthConfig::default() };
        synth_videos(&cfg, 4).unwrap().train_dataset(16).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            iterations: 40,
            lr: 1e-3,
            lr_drop_iter: 30,
            batch_size: 4,
            hidden1: 8,
            hidden2: 4,
            log_interval: 1,
            kmeans_restarts: 3,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_rejected() {
        let data = small_data();
        let cfg = TrainConfig { iterations: 0, ..small_config() };
        assert!(matches!(Trainer::new(&data, cfg), Err(Error::Config(_))));
    }

    #[test]
    fn single_class_with_cluster_loss_rejected() {
        let mut data = small_data();
        data.videos.retain(|v| v.label == Label::Normal);
        assert!(matches!(Trainer::new(&data, small_config()), Err(Error::Dataset(_))));
        let cfg = TrainConfig { use_cluster_loss: false, ..small_config() };
        assert!(Trainer::new(&data, cfg).is_ok());
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = Dataset { videos: vec![], segment_len: 16 };
        assert!(matches!(Trainer::new(&data, small_config()), Err(Error::Dataset(_))));
    }

    #[test]
    fn refresh_count_tracks_epochs() {
        let data = small_data();
        let mut t = Trainer::new(&data, small_config()).unwrap();
        let k = t.batch_count() as u64;
        assert_eq!(k, 12);
        assert_eq!(t.refreshes(), 1);
        let mut boundaries = 0;
        for _ in 0..40 {
            if t.step().unwrap().ends_epoch {
                boundaries += 1;
            }
            assert_eq!(t.refreshes(), boundaries + 1);
        }
        assert_eq!(boundaries, 40 / k);
    }

    #[test]
    fn no_refresh_without_cluster_loss() {
        let data = small_data();
        let mut t = Trainer::new(&data, TrainConfig { use_cluster_loss: false, ..small_config() }).unwrap();
        t.run().unwrap();
        assert_eq!(t.refreshes(), 0);
        assert!(t.log().rows.iter().all(|r| r.loss_c == 0.0));
    }

    #[test]
    fn lr_schedule_visible_in_log() {
        let data = small_data();
        let (_, log) = train(&data, small_config()).unwrap();
        assert_eq!(log.rows.len(), 40);
        for r in &log.rows {
            let expected = if r.iter < 30 { 1e-3 } else { 1e-4 };
            assert_eq!(r.lr, expected);
        }
        assert!(log.to_csv().starts_with("iter,lr,loss_total,loss_reg,loss_ts,loss_s,loss_c,epoch\n"));
    }

    #[test]
    fn log_interval_thins_rows() {
        let data = small_data();
        let (_, log) = train(&data, TrainConfig { log_interval: 15, ..small_config() }).unwrap();
        let iters: Vec<u64> = log.rows.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 15, 30, 39]);
    }

    #[test]
    fn deterministic_in_seed() {
        let data = small_data();
        let (a, _) = train(&data, small_config()).unwrap();
        let (b, _) = train(&data, small_config()).unwrap();
        assert_eq!(a, b);
        let (c, _) = train(&data, TrainConfig { seed: 12, ..small_config() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sequential_order_without_rbs() {
        let data = small_data();
        let mut t = Trainer::new(&data, TrainConfig { use_rbs: false, ..small_config() }).unwrap();
        let mut seen = Vec::new();
        for _ in 0..12 {
            t.step().unwrap();
            seen.push(t.selector.state().cursor);
        }
        let expected: Vec<usize> = (1..12).chain([0]).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn toggles_off_match_plain_backbone() {
        // All toggles off on a suppression model vs. a suppression-free model
        // with both auxiliary weights at zero: identical backbone updates.
        let data = small_data();
        let off = small_config().backbone_only();
        let plain = TrainConfig {
            mode: SuppressionMode::None,
            use_rbs: false,
            loss: LossWeights { lambda1: 0.0, lambda2: 0.0, ..LossWeights::default() },
            ..small_config()
        };
        let (a, _) = train(&data, off).unwrap();
        let (b, _) = train(&data, plain).unwrap();
        let (ta, tb) = (&a.tensors, &b.tensors);
        assert_eq!(ta.w1, tb.w1);
        assert_eq!(ta.b1, tb.b1);
        assert_eq!(ta.w2, tb.w2);
        assert_eq!(ta.b2, tb.b2);
        assert_eq!(ta.w3, tb.w3);
        assert_eq!(ta.b3, tb.b3);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let data = small_data();
        let mut t = Trainer::new(&data, small_config()).unwrap();
        t.run_until(17).unwrap();
        let ckpt = t.checkpoint();
        let bytes = encode_checkpoint(&ckpt);
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corrupted_checkpoints_rejected() {
        let data = small_data();
        let t = Trainer::new(&data, small_config()).unwrap();
        let bytes = encode_checkpoint(&t.checkpoint());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = decode_checkpoint(&bad, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("magic mismatch"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_checkpoint(&bad, Path::new("x")).unwrap_err().to_string().contains("version"));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], Path::new("x")).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long, Path::new("x")).is_err());
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let data = small_data();
        for cfg in [small_config(), TrainConfig { use_rbs: false, use_cluster_loss: false, ..small_config() }] {
            let (full, _) = train(&data, cfg.clone()).unwrap();
            let mut first = Trainer::new(&data, cfg).unwrap();
            first.run_until(13).unwrap();
            let bytes = encode_checkpoint(&first.checkpoint());
            drop(first);
            let ckpt = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
            let mut second = Trainer::resume(&data, ckpt).unwrap();
            second.run().unwrap();
            assert_eq!(second.params(), &full);
        }
    }

    #[test]
    fn resume_requires_state_and_matching_data() {
        let data = small_data();
        let t = Trainer::new(&data, small_config()).unwrap();
        let mut ckpt = t.checkpoint();
        ckpt.state = None;
        assert!(Trainer::resume(&data, ckpt).is_err());

        let other =
            synth_videos(&SynthConfig { d: 5, ..SynthConfig::default() }, 1).unwrap().train_dataset(16).unwrap();
        assert!(matches!(Trainer::resume(&other, t.checkpoint()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn loss_decreases_on_easy_data() {
        let data = small_data();
        let cfg = TrainConfig { iterations: 300, dropout_rate: 0.0, lr: 3e-3, lr_drop_iter: 300, ..small_config() };
        let (_, log) = train(&data, cfg).unwrap();
        let head: f64 = log.rows[..24].iter().map(|r| r.loss_reg).sum::<f64>() / 24.0;
        let tail: f64 = log.rows[log.rows.len() - 24..].iter().map(|r| r.loss_reg).sum::<f64>() / 24.0;
        assert!(tail < head, "{head} -> {tail}");
    }
}
