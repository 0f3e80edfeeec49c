//! Disk round trip through the whole library: synthesize, load, train,
//! checkpoint, reload, evaluate.

use wsvad::dataio::{synth_generate, Dataset, SynthConfig};
use wsvad::evaluation::{evaluate, EvalOptions};
use wsvad::experiments::benchmark_config;
use wsvad::trainer::{load_checkpoint, save_checkpoint, Trainer};

fn small_synth() -> SynthConfig {
    SynthConfig {
        d: 16,
        n_normal: 8,
        n_anomalous: 8,
        segments_per_video: 32,
        n_test_normal: 3,
        n_test_anomalous: 3,
        ..SynthConfig::default()
    }
}

#[test]
fn synthesize_train_checkpoint_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_synth();
    let out = synth_generate(&synth, 11, dir.path()).unwrap();
    let train = Dataset::load(&out.train_manifest, synth.segment_len).unwrap();
    let test = Dataset::load(out.test_manifest.as_ref().unwrap(), synth.segment_len).unwrap();
    assert_eq!(train.videos.len(), 16);
    assert_eq!(test.videos.len(), 6);
    assert_eq!(train.videos, out.data.train, "disk round trip changed the features");

    let cfg = benchmark_config(600, 2);
    let mut trainer = Trainer::new(&train, cfg.clone()).unwrap();
    trainer.run().unwrap();
    let ckpt_path = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt_path, &trainer.checkpoint()).unwrap();
    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    assert_eq!(ckpt.config, cfg);
    assert_eq!(&ckpt.params, trainer.params());

    let opts = EvalOptions::for_config(&ckpt.config);
    let report = evaluate(&ckpt.params, &test, &opts).unwrap();
    let direct = evaluate(trainer.params(), &test, &opts).unwrap();
    assert_eq!(report.metrics, direct.metrics);
    assert_eq!(report.timelines.len(), 6);
    assert_eq!(report.metrics.n_frames, 6 * 32 * 16);
    assert!(report.metrics.auc > 0.9, "auc {}", report.metrics.auc);
    let far = report.metrics.far.expect("test set has normal videos");
    assert!((0.0..=1.0).contains(&far), "far {far}");
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig { n_test_normal: 0, n_test_anomalous: 0, ..small_synth() };
    let out = synth_generate(&synth, 5, dir.path()).unwrap();
    let train = Dataset::load(&out.train_manifest, synth.segment_len).unwrap();
    let cfg = benchmark_config(120, 7);

    let mut straight = Trainer::new(&train, cfg.clone()).unwrap();
    straight.run().unwrap();

    let mut first = Trainer::new(&train, cfg).unwrap();
    first.run_until(50).unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&path, &first.checkpoint()).unwrap();
    let mut resumed = Trainer::resume(&train, load_checkpoint(&path).unwrap()).unwrap();
    resumed.run().unwrap();

    assert_eq!(resumed.params(), straight.params());
    assert_eq!(resumed.refreshes(), straight.refreshes());
}
