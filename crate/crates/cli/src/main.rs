//! `wsvad`: synthesize datasets, train, evaluate, export score timelines, and
//! run ablations and hyperparameter sweeps.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wsvad::dataio::{synth_generate, Dataset, SynthConfig, DEFAULT_SEGMENT_LEN};
use wsvad::evaluation::{evaluate, EvalOptions};
use wsvad::experiments::{self, apply_ablations, Ablation, Benchmark, Stage, SweepParam};
use wsvad::model::SuppressionMode;
use wsvad::trainer::{load_checkpoint, save_checkpoint, TrainConfig, Trainer};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] wsvad::Error),
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "wsvad", version, about = "Weakly supervised video anomaly detection on precomputed segment features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (features, ground truth, manifests)
    Synth(SynthArgs),
    /// Train a model on a manifest and write a checkpoint and a training log
    Train(TrainCmd),
    /// Evaluate a checkpoint on a test manifest and report AUC and FAR as JSON
    Eval(EvalArgs),
    /// Write one per-frame score CSV per test video
    ExportScores(ExportArgs),
    /// Train and evaluate the incremental ablation stages
    Ablate(AblateArgs),
    /// Train and evaluate one model per value of a loss hyperparameter
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Synthetic config JSON (defaults: d=32, 10+10 videos, 64 segments)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Training settings shared by every command that trains.
#[derive(Args, Debug)]
struct TrainArgs {
    /// Training config JSON; flags below override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Iteration at which the learning rate drops
    #[arg(long)]
    lr_drop_iter: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// elementwise_temporal, feature_vector, elementwise_spatial, residual or none
    #[arg(long)]
    mode: Option<SuppressionMode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Components to switch off: disable-rbs, disable-nsm1, disable-nsm2,
    /// no-aux-losses, no-cluster-loss (comma-separated)
    #[arg(long, value_delimiter = ',')]
    ablation: Vec<Ablation>,
    /// Keep a log row every N iterations
    #[arg(long)]
    log_interval: Option<u64>,
    /// Frames per segment
    #[arg(long, default_value_t = DEFAULT_SEGMENT_LEN)]
    segment_len: usize,
}

impl TrainArgs {
    fn effective_config(&self) -> CliResult<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.iterations = self.iterations.unwrap_or(cfg.iterations);
        cfg.lr_drop_iter = self.lr_drop_iter.unwrap_or(cfg.lr_drop_iter);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.mode = self.mode.unwrap_or(cfg.mode);
        cfg.log_interval = self.log_interval.unwrap_or(cfg.log_interval);
        set(&mut cfg.lr, self.lr);
        set(&mut cfg.dropout_rate, self.dropout);
        set(&mut cfg.loss.alpha, self.alpha);
        set(&mut cfg.loss.beta, self.beta);
        set(&mut cfg.loss.lambda1, self.lambda1);
        set(&mut cfg.loss.lambda2, self.lambda2);
        apply_ablations(&mut cfg, &self.ablation);
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Training manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for model.ckpt, train_log.csv and config.json
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test manifest (every video needs frame ground truth)
    #[arg(long)]
    manifest: PathBuf,
    /// Also write the metrics JSON to this file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score threshold for the false alarm rate
    #[arg(long, default_value_t = wsvad::evaluation::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_SEGMENT_LEN)]
    segment_len: usize,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory, one `<video_id>.csv` per video
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEGMENT_LEN)]
    segment_len: usize,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    test_manifest: PathBuf,
    /// Output directory for ablation.csv and config.json
    #[arg(long)]
    out: PathBuf,
    /// Seeds to average over (defaults to the config seed)
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// alpha, beta, lambda1 or lambda2
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values, e.g. 0,0.3,0.5,0.7,1
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    test_manifest: PathBuf,
    /// Output directory for sweep.csv and config.json
    #[arg(long)]
    out: PathBuf,
    /// Seeds to average over (defaults to the config seed)
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[command(flatten)]
    train: TrainArgs,
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| wsvad::Error::io(dir, e).into())
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents).map_err(|e| wsvad::Error::io(path, e).into())
}

fn echo_config(dir: &Path, cfg: &TrainConfig) -> CliResult {
    write_file(&dir.join("config.json"), &cfg.to_json())
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let cfg = match &args.config {
        Some(path) => SynthConfig::load(path)?,
        None => SynthConfig::default(),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = synth_generate(&cfg, args.seed, &args.out)?;
    println!(
        "wrote {} training videos ({} normal, {} anomalous) to {}",
        cfg.n_normal + cfg.n_anomalous,
        cfg.n_normal,
        cfg.n_anomalous,
        out.train_manifest.display()
    );
    if let Some(test) = &out.test_manifest {
        println!(
            "wrote {} test videos ({} normal, {} anomalous) to {}",
            cfg.n_test_normal + cfg.n_test_anomalous,
            cfg.n_test_normal,
            cfg.n_test_anomalous,
            test.display()
        );
    }
    println!(
        "{} segments per video of {} frames, d={}, anomaly span {} segments",
        cfg.segments_per_video,
        cfg.segment_len,
        cfg.d,
        cfg.span_len()
    );
    Ok(())
}

fn cmd_train(args: TrainCmd) -> CliResult {
    let cfg = args.train.effective_config()?;
    let data = Dataset::load(&args.manifest, args.train.segment_len)?;
    create_dir(&args.out)?;
    echo_config(&args.out, &cfg)?;
    let mut trainer = Trainer::new(&data, cfg)?;
    trainer.run()?;
    let ckpt_path = args.out.join("model.ckpt");
    save_checkpoint(&ckpt_path, &trainer.checkpoint())?;
    trainer.log().write_csv(&args.out.join("train_log.csv"))?;
    let last = trainer.log().rows.last().expect("at least one iteration ran");
    println!(
        "trained {} iterations ({} epochs, {} cluster refreshes) on {} videos; final loss {:.6}; checkpoint {}",
        trainer.iteration(),
        trainer.epoch(),
        trainer.refreshes(),
        data.videos.len(),
        last.loss_total,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = Dataset::load(&args.manifest, args.segment_len)?;
    let opts = EvalOptions { threshold: args.threshold, ..EvalOptions::for_config(&ckpt.config) };
    let report = evaluate(&ckpt.params, &data, &opts)?;
    let json = report.metrics.to_json();
    if let Some(path) = &args.out {
        write_file(path, &json)?;
    }
    println!("{json}");
    Ok(())
}

/// File name for a video's timeline; ids may contain path separators.
fn timeline_name(video_id: &str) -> String {
    let safe: String =
        video_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
    format!("{safe}.csv")
}

fn cmd_export(args: ExportArgs) -> CliResult {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = Dataset::load(&args.manifest, args.segment_len)?;
    let report = evaluate(&ckpt.params, &data, &EvalOptions::for_config(&ckpt.config))?;
    create_dir(&args.out)?;
    echo_config(&args.out, &ckpt.config)?;
    for timeline in &report.timelines {
        timeline.write_csv(&args.out.join(timeline_name(&timeline.video_id)))?;
    }
    println!("wrote {} score timelines to {}", report.timelines.len(), args.out.display());
    Ok(())
}

fn load_benchmark(train: &Path, test: &Path, segment_len: usize) -> CliResult<Benchmark> {
    let bench = Benchmark { train: Dataset::load(train, segment_len)?, test: Dataset::load(test, segment_len)? };
    if bench.train.dim() != bench.test.dim() {
        return Err(wsvad::Error::DimensionMismatch { expected: bench.train.dim(), found: bench.test.dim() }.into());
    }
    Ok(bench)
}

fn seeds_or(seeds: &[u64], cfg: &TrainConfig) -> Vec<u64> {
    if seeds.is_empty() {
        vec![cfg.seed]
    } else {
        seeds.to_vec()
    }
}

fn cmd_ablate(args: AblateArgs) -> CliResult {
    let cfg = args.train.effective_config()?;
    let seeds = seeds_or(&args.seeds, &cfg);
    let bench = load_benchmark(&args.manifest, &args.test_manifest, args.train.segment_len)?;
    create_dir(&args.out)?;
    echo_config(&args.out, &cfg)?;
    let mut csv = String::from("stage,seed,auc,far\n");
    for stage in Stage::ALL {
        for &seed in &seeds {
            let run_cfg = TrainConfig { seed, ..stage.configure(&cfg) };
            let result = experiments::run(&bench, &run_cfg)?;
            let far = result.metrics.far.map(|f| f.to_string()).unwrap_or_default();
            writeln!(csv, "{},{seed},{},{far}", stage.name(), result.metrics.auc).expect("writing to a String");
            println!("{:<18} seed {seed}: auc {:.4}", stage.name(), result.metrics.auc);
        }
    }
    write_file(&args.out.join("ablation.csv"), &csv)
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    if args.grid.is_empty() {
        return Err(CliError::Usage("--grid needs at least one value".into()));
    }
    let cfg = args.train.effective_config()?;
    let seeds = seeds_or(&args.seeds, &cfg);
    let bench = load_benchmark(&args.manifest, &args.test_manifest, args.train.segment_len)?;
    create_dir(&args.out)?;
    echo_config(&args.out, &cfg)?;
    let mut totals = vec![0.0; args.grid.len()];
    for &seed in &seeds {
        let rows = experiments::sweep(&bench, &TrainConfig { seed, ..cfg.clone() }, args.param, &args.grid)?;
        for (total, row) in totals.iter_mut().zip(rows) {
            *total += row.auc;
        }
    }
    let mut csv = String::from("value,auc\n");
    for (value, total) in args.grid.iter().zip(totals) {
        let auc = total / seeds.len() as f64;
        writeln!(csv, "{value},{auc}").expect("writing to a String");
        println!("{}={value}: auc {auc:.4}", args.param.name());
    }
    write_file(&args.out.join("sweep.csv"), &csv)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportScores(a) => cmd_export(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Run(_) => 2,
            })
        }
    }
}
