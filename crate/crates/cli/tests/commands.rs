//! End-to-end behaviour of the commands on small configurations.

use std::fs;
use std::path::Path;
use std::process::Command;

use imh_cli::config::{markov_config, ExperimentConfig, Metric, RuleKind};
use imh_cli::eval::{test_tv, RatioSource};
use imh_cli::run::{
    checkpoint_path, cmd_eval, cmd_sample, cmd_train, load_checkpoint, run_checkpoints,
};
use imh_cli::train::init_discriminator;
use imh_core::bounds::{random_instance, test_tv_metric, QuadratureGrid, TestTvMethod};
use imh_core::discriminator::{Architecture, HeadKind};
use imh_core::distributions::{DensitySpec, Point};
use imh_core::losses::LossKind;
use imh_core::proposals::ProposalKernel;
use imh_core::rng::stream;

fn small(mut c: ExperimentConfig) -> ExperimentConfig {
    c.training.iterations = 20;
    c.training.snapshot_interval = 10;
    c.training.batch_size = 32;
    c.training.dataset_size = 500;
    c.evaluation.test_tv_samples = 2000;
    c.evaluation.repetitions = 2;
    c.evaluation.chain_length = 2000;
    c.evaluation.loss_pairs = 200;
    c.discriminator.architecture = Architecture::Mlp {
        input_dim: 1,
        hidden: vec![8, 8],
    };
    c
}

fn finite_config(loss: LossKind, learning_rate: f64) -> ExperimentConfig {
    let inst = random_instance(4, 0.1, &mut stream(5, 0));
    let mut c = small(markov_config(loss));
    c.name = "finite".into();
    c.target = DensitySpec::categorical(inst.p).unwrap();
    c.proposal = ProposalKernel::FiniteMatrix { matrix: inst.q };
    c.discriminator.architecture = Architecture::PairTable { states: 4 };
    c.discriminator.head = HeadKind::Tabular;
    c.training.learning_rate = learning_rate;
    c.evaluation.metrics = vec![Metric::TestTv, Metric::Chain];
    c
}

fn bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn zero_iteration_run_checkpoints_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(markov_config(LossKind::UB));
    c.training.iterations = 0;
    let report = cmd_train(&c, dir.path()).unwrap();
    assert_eq!(report.snapshots, vec![0]);
    let (it, disc) = load_checkpoint(&checkpoint_path(dir.path(), 0), &c).unwrap();
    assert_eq!(it, 0);
    assert_eq!(disc, init_discriminator(&c).unwrap());
    let saved = ExperimentConfig::load(&dir.path().join("config.json")).unwrap();
    assert_eq!(saved, c);
}

#[test]
fn same_seed_gives_identical_files() {
    let c = small(markov_config(LossKind::MCE));
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_train(&c, a.path()).unwrap();
    cmd_train(&c, b.path()).unwrap();
    for path in run_checkpoints(&c, a.path()) {
        let other = b.path().join(path.strip_prefix(a.path()).unwrap());
        assert_eq!(bytes(&path), bytes(&other));
    }
    assert_eq!(bytes(&a.path().join("losses.csv")), bytes(&b.path().join("losses.csv")));
    let mut shifted = c.clone();
    shifted.training.seed = 1;
    let s = tempfile::tempdir().unwrap();
    cmd_train(&shifted, s.path()).unwrap();
    assert_ne!(bytes(&a.path().join("losses.csv")), bytes(&s.path().join("losses.csv")));
}

#[test]
fn checkpoint_must_match_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(markov_config(LossKind::UB));
    cmd_train(&c, dir.path()).unwrap();
    let mut other = c.clone();
    other.discriminator.architecture = Architecture::Mlp {
        input_dim: 1,
        hidden: vec![4],
    };
    assert!(load_checkpoint(&checkpoint_path(dir.path(), 0), &other).is_err());
}

#[test]
fn symmetric_checkpoint_never_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(markov_config(LossKind::UB));
    cmd_train(&c, dir.path()).unwrap();
    let r = cmd_sample(&c, Some(&checkpoint_path(dir.path(), 0)), Some(5000), dir.path()).unwrap();
    assert_eq!(r.stats.rejection_rate, 0.0);
    assert!(dir.path().join("chains").join("markov-UB.csv").exists());
    assert!(dir.path().join("chain_stats.json").exists());
}

#[test]
fn finite_chain_matches_realized_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let c = finite_config(LossKind::UB, 0.05);
    cmd_train(&c, dir.path()).unwrap();
    let r = cmd_sample(&c, Some(&checkpoint_path(dir.path(), 20)), Some(1_000_000), dir.path()).unwrap();
    let s = r.stationary.expect("finite comparison");
    assert!(s.max_abs_error < 5e-3, "{s:?}");
    assert!(r.stats.rejection_rate > 0.0);
}

#[test]
fn exact_ratio_has_zero_test_tv() {
    let dir = tempfile::tempdir().unwrap();
    let finite = finite_config(LossKind::UB, 0.05);
    let records = cmd_eval(&finite, &[], true, dir.path()).unwrap();
    assert!(records[0].test_tv_mean.unwrap() < 1e-12);
    let c = small(markov_config(LossKind::UB));
    let records = cmd_eval(&c, &[], true, dir.path()).unwrap();
    assert!(records[0].test_tv_mean.unwrap() < 1e-12);
    assert!(records[0].histogram_tv.is_some());
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn initial_snapshot_matches_unit_ratio_reference() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(markov_config(LossKind::UB));
    c.evaluation.test_tv_samples = 50_000;
    c.evaluation.repetitions = 5;
    let unit = |_: &Point, _: &Point| Ok(1.0);
    let grid = QuadratureGrid::new(10.0, 801).unwrap();
    let reference = test_tv_metric(&c.target, &c.proposal, &unit, TestTvMethod::Quadrature2d { grid })
        .unwrap()
        .value;
    cmd_train(&c, dir.path()).unwrap();
    let (_, disc) = load_checkpoint(&checkpoint_path(dir.path(), 0), &c).unwrap();
    let s = test_tv(&c, &RatioSource::Trained(disc)).unwrap();
    let se_of_mean = s.std_error / (c.evaluation.repetitions as f64).sqrt();
    assert!((s.mean - reference).abs() < 4.0 * se_of_mean, "{} vs {reference} ({se_of_mean})", s.mean);
    let records = cmd_eval(&c, &[checkpoint_path(dir.path(), 0)], false, dir.path()).unwrap();
    assert_eq!(records[0].test_tv_mean, Some(s.mean));
    assert_eq!(records[0].probe_pearson, None);
}

#[test]
fn failed_update_keeps_last_good_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = finite_config(LossKind::MCE, 1e3);
    c.training.iterations = 1000;
    c.training.snapshot_interval = 1000;
    let err = cmd_train(&c, dir.path()).unwrap_err();
    assert!(err.to_string().contains("training failed"), "{err}");
    assert!(dir.path().join("weights").join("last_good.imhw").exists());
}

#[test]
fn analytic_sampler_needs_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(markov_config(LossKind::UB));
    c.sampler.rule = RuleKind::Analytic;
    let r = cmd_sample(&c, None, Some(20_000), dir.path()).unwrap();
    assert!(r.stats.rejection_rate > 0.0 && r.stats.rejection_rate < 1.0);
    c.sampler.rule = RuleKind::Pairwise;
    assert!(cmd_sample(&c, None, Some(10), dir.path()).is_err());
}

fn imh(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_imh")).args(args).output().unwrap()
}

#[test]
fn binary_verify_and_replay_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = imh(&["verify", "--instances", "20", "--seed", "4", "--out", out]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value = serde_json::from_slice(&bytes(&dir.path().join("report.json"))).unwrap();
    assert_eq!(report["all_passed"], true);
    assert_eq!(report["suites"].as_array().unwrap().len(), 7);

    let mut inst = random_instance(3, 0.2, &mut stream(1, 1));
    let good = dir.path().join("good.json");
    fs::write(&good, inst.to_json()).unwrap();
    let run = imh(&["verify", "--replay", good.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0));

    inst.d[0][1] = 0.05;
    let bad = dir.path().join("bad.json");
    fs::write(&bad, inst.to_json()).unwrap();
    let run = imh(&["verify", "--replay", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(run.status.code(), Some(2));
    let replay: serde_json::Value = serde_json::from_slice(&bytes(&dir.path().join("replay.json"))).unwrap();
    assert_eq!(replay["status"], "rejected");
}

#[test]
fn binary_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(markov_config(LossKind::UB));
    let config = dir.path().join("c.json");
    fs::write(&config, c.to_json()).unwrap();
    let run_dir = dir.path().join("run");
    let run = imh(&["train", "--config", config.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let ck = checkpoint_path(&run_dir, 20);
    let run = imh(&[
        "eval",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(text.starts_with("iteration,loss,test_tv_mean"));
    assert_eq!(text.lines().count(), 2);

    let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
    v["training"]["extra"] = serde_json::json!(1);
    fs::write(&config, v.to_string()).unwrap();
    let run = imh(&["train", "--config", config.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(3));
}
