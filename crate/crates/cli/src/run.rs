//! The commands behind the binary, writing the artifact layout
//!
//! ```text
//! <out>/config.json
//! <out>/weights/iter_<k>.imhw
//! <out>/losses.csv
//! <out>/metrics.csv
//! <out>/chains/<name>.csv
//! <out>/report.json
//! <out>/timing.json      wall-clock only; every other file is a function of (config, seed)
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use imh_core::bounds::{stationary_of_kernel, tv_continuous, QuadratureGrid, Table};
use imh_core::discriminator::{read_checkpoint, write_checkpoint, Discriminator};
use imh_core::distributions::{DensitySpec, Point};
use imh_core::losses::LossKind;
use imh_core::proposals::ProposalKernel;
use imh_core::sampler::{chain_stats, AcceptanceRule, ChainStats};
use serde::Serialize;
use serde_json::json;

use crate::config::{experiment_configs, ExperimentConfig, Metric};
use crate::eval::{
    acceptance_rule, chain_distance, evaluate_snapshot, filtered_chain, loss_pairs,
    unfiltered_rule, MetricsRecord, RatioSource,
};
use crate::train::{dataset, streams, train, LossRow, TrainFailure};
use crate::verify::{parse_replay, replay, run_suites, ReplayReport, Suite, VerifyReport};

/// Lags reported by chain statistics.
pub const AUTOCORRELATION_LAGS: usize = 10;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn checkpoint_path(out: &Path, iteration: u64) -> PathBuf {
    out.join("weights").join(format!("iter_{iteration}.imhw"))
}

fn save_checkpoint(path: &Path, disc: &Discriminator, seed: u64, iteration: u64) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, disc, seed, iteration)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint and checks it was written for `config`'s discriminator.
pub fn load_checkpoint(path: &Path, config: &ExperimentConfig) -> anyhow::Result<(u64, Discriminator)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (header, disc) = read_checkpoint(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))?;
    let d = &config.discriminator;
    if header.architecture != d.architecture || header.head != d.head || header.floor != d.floor {
        bail!(
            "checkpoint {} holds a {:?} {:?} discriminator with floor {}, config expects {:?} {:?} with floor {}",
            path.display(),
            header.head,
            header.architecture,
            header.floor,
            d.head,
            d.architecture,
            d.floor
        );
    }
    Ok((header.iteration, disc))
}

/// Records wall-clock time beside the deterministic outputs.
pub fn write_timing(out: &Path, command: &str, started: Instant) -> anyhow::Result<()> {
    let unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &out.join("timing.json"),
        &json!({
            "command": command,
            "finished_unix_seconds": unix,
            "elapsed_seconds": started.elapsed().as_secs_f64(),
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub name: String,
    pub loss: LossKind,
    pub iterations: u64,
    pub snapshots: Vec<u64>,
    pub final_batch_loss: Option<f64>,
    pub guard_hits: usize,
}

/// Trains and writes `config.json`, snapshots, `losses.csv` and `report.json`.
pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> anyhow::Result<TrainReport> {
    config.validate()?;
    write_json(&out.join("config.json"), config)?;
    let seed = config.training.seed;
    let outcome = train(config, |snap| {
        save_checkpoint(&checkpoint_path(out, snap.iteration), &snap.disc, seed, snap.iteration)
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            if let Some(f) = e.downcast_ref::<TrainFailure>() {
                save_checkpoint(
                    &out.join("weights").join("last_good.imhw"),
                    &f.last_good,
                    seed,
                    f.iteration - 1,
                )?;
            }
            return Err(e);
        }
    };
    write_csv(&out.join("losses.csv"), &outcome.losses)?;
    let report = TrainReport {
        name: config.name.clone(),
        loss: config.loss,
        iterations: config.training.iterations,
        snapshots: outcome.snapshots.iter().map(|s| s.iteration).collect(),
        final_batch_loss: outcome.losses.last().map(|r: &LossRow| r.loss),
        guard_hits: outcome.losses.iter().map(|r| r.guard_hits).sum(),
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Raw proposal TV to the target, when both are analytic and continuous.
pub fn proposal_tv(config: &ExperimentConfig) -> anyhow::Result<Option<f64>> {
    match (&config.proposal, &config.target) {
        (_, DensitySpec::FiniteCategorical { .. }) => Ok(None),
        (ProposalKernel::Independent { density }, target) => {
            Ok(Some(tv_continuous(target, density, &QuadratureGrid::default())?.tv))
        }
        _ => Ok(None),
    }
}

/// Transition matrix realized by `rule` on a finite space.
pub fn finite_kernel(rule: &AcceptanceRule, kernel: &ProposalKernel, states: usize) -> anyhow::Result<Table> {
    let mut t = vec![vec![0.0; states]; states];
    for y in 0..states {
        let yp = Point::state(y);
        let mut stay = kernel.density(&yp, &yp)?;
        for x in (0..states).filter(|x| *x != y) {
            let xp = Point::state(x);
            let q = kernel.density(&xp, &yp)?;
            t[x][y] = q * rule.acceptance_prob(&xp, &yp)?;
            stay += q - t[x][y];
        }
        t[y][y] = stay;
    }
    Ok(t)
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryComparison {
    pub exact: Vec<f64>,
    pub empirical: Vec<f64>,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleReport {
    pub name: String,
    pub seed: u64,
    pub stats: ChainStats,
    /// Histogram TV (continuous) or frequency TV (finite) to the target.
    pub distance_to_target: f64,
    pub proposal_tv: Option<f64>,
    pub unfiltered_distance: Option<f64>,
    pub stationary: Option<StationaryComparison>,
}

/// Runs the configured sampler and writes `chains/<name>.csv` and `chain_stats.json`.
pub fn cmd_sample(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    steps: Option<usize>,
    out: &Path,
) -> anyhow::Result<SampleReport> {
    config.validate()?;
    let disc = match checkpoint {
        Some(path) => Some(load_checkpoint(path, config)?.1),
        None => None,
    };
    sample_with(config, disc.as_ref(), steps, out)
}

fn sample_with(
    config: &ExperimentConfig,
    disc: Option<&Discriminator>,
    steps: Option<usize>,
    out: &Path,
) -> anyhow::Result<SampleReport> {
    let data = dataset(config)?;
    let n = steps.unwrap_or(config.evaluation.chain_length);
    let rule = acceptance_rule(config, disc)?;
    let chain = filtered_chain(config, &rule, &data, n, streams::CHAIN)?;
    let chains = out.join("chains");
    fs::create_dir_all(&chains)?;
    chain.write_csv(BufWriter::new(File::create(chains.join(format!("{}.csv", config.name)))?))?;
    let stats = chain_stats(&chain, AUTOCORRELATION_LAGS)?;
    let distance_to_target = chain_distance(&config.target, &chain)?;
    let unfiltered_distance = if config.proposal.is_independent() || !config.proposal.has_density() {
        let raw = filtered_chain(config, &unfiltered_rule(), &data, n, streams::BASELINE_CHAIN)?;
        raw.write_csv(BufWriter::new(File::create(chains.join("unfiltered.csv"))?))?;
        Some(chain_distance(&config.target, &raw)?)
    } else {
        None
    };
    let stationary = match (&config.target, config.proposal.states()) {
        (DensitySpec::FiniteCategorical { probs }, Some(k)) => {
            let exact = stationary_of_kernel(&finite_kernel(&rule, &config.proposal, k)?)?;
            let mut empirical = vec![0.0; probs.len()];
            for p in &chain.points {
                empirical[p.as_state(k)?] += 1.0 / n as f64;
            }
            let max_abs_error = exact
                .iter()
                .zip(&empirical)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Some(StationaryComparison {
                exact,
                empirical,
                max_abs_error,
            })
        }
        _ => None,
    };
    let report = SampleReport {
        name: config.name.clone(),
        seed: chain.seed,
        stats,
        distance_to_target,
        proposal_tv: proposal_tv(config)?,
        unfiltered_distance,
        stationary,
    };
    write_json(&out.join("chain_stats.json"), &report)?;
    Ok(report)
}

fn finite_or_none(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

fn sanitize(mut r: MetricsRecord) -> MetricsRecord {
    r.probe_pearson = finite_or_none(r.probe_pearson);
    r
}

/// Evaluates snapshots (or the exact ratio) and writes `metrics.csv`.
pub fn cmd_eval(
    config: &ExperimentConfig,
    checkpoints: &[PathBuf],
    exact_ratio: bool,
    out: &Path,
) -> anyhow::Result<Vec<MetricsRecord>> {
    config.validate()?;
    let mut sources = Vec::new();
    for path in checkpoints {
        let (iteration, disc) = load_checkpoint(path, config)?;
        sources.push((iteration, RatioSource::Trained(disc)));
    }
    if exact_ratio {
        sources.push((config.training.iterations, RatioSource::Exact));
    }
    if sources.is_empty() {
        bail!("eval needs at least one checkpoint or --exact-ratio");
    }
    let records = evaluate_all(config, &sources)?;
    write_csv(&out.join("metrics.csv"), &records)?;
    Ok(records)
}

fn evaluate_all(
    config: &ExperimentConfig,
    sources: &[(u64, RatioSource)],
) -> anyhow::Result<Vec<MetricsRecord>> {
    let data = dataset(config)?;
    let pairs = loss_pairs(config, &data)?;
    sources
        .iter()
        .map(|(iteration, source)| {
            evaluate_snapshot(config, *iteration, source, &data, &pairs).map(sanitize)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub loss: LossKind,
    pub metrics: Vec<MetricsRecord>,
    pub initial_test_tv: Option<f64>,
    pub final_test_tv: Option<f64>,
    /// Final over initial test-TV.
    pub test_tv_ratio: Option<f64>,
    pub test_tv_decreasing: Option<bool>,
    pub sample: SampleReport,
    /// `loss - 1` of the final snapshot for UB runs; the KL term of the bound
    /// is not computable for implicit continuous proposals.
    pub ub_bracket: Option<serde_json::Value>,
}

/// Train, evaluate every snapshot, then sample from the final one.
pub fn run_config(config: &ExperimentConfig, out: &Path) -> anyhow::Result<RunSummary> {
    let started = Instant::now();
    cmd_train(config, out)?;
    let mut sources = Vec::new();
    let mut iteration = 0;
    loop {
        let (it, disc) = load_checkpoint(&checkpoint_path(out, iteration), config)?;
        sources.push((it, RatioSource::Trained(disc)));
        if iteration >= config.training.iterations {
            break;
        }
        iteration += config.training.snapshot_interval;
    }
    let metrics = evaluate_all(config, &sources)?;
    write_csv(&out.join("metrics.csv"), &metrics)?;
    let final_disc = match &sources.last().expect("at least the initial snapshot").1 {
        RatioSource::Trained(d) => d.clone(),
        RatioSource::Exact => unreachable!("run sources are checkpoints"),
    };
    let sample = sample_with(config, Some(&final_disc), None, out)?;
    let tvs: Vec<f64> = metrics.iter().filter_map(|m| m.test_tv_mean).collect();
    let initial_test_tv = tvs.first().copied();
    let final_test_tv = tvs.last().copied();
    let ub_bracket = (config.loss == LossKind::UB)
        .then(|| metrics.last().and_then(|m| m.loss))
        .flatten()
        .map(|loss| json!({ "loss_minus_one": loss - 1.0, "kl": "unavailable" }));
    let summary = RunSummary {
        name: config.name.clone(),
        loss: config.loss,
        initial_test_tv,
        final_test_tv,
        test_tv_ratio: initial_test_tv.zip(final_test_tv).map(|(a, b)| b / a),
        test_tv_decreasing: (tvs.len() > 1).then(|| final_test_tv < initial_test_tv),
        metrics,
        sample,
        ub_bracket,
    };
    write_json(&out.join("report.json"), &summary)?;
    write_timing(out, "experiment", started)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub runs: Vec<RunSummary>,
    /// Shape checks on the curves; which apply depends on the experiment.
    pub checks: serde_json::Value,
}

/// Runs a named experiment, one subdirectory per configuration.
pub fn cmd_experiment(name: &str, seed: Option<u64>, out: &Path) -> anyhow::Result<ExperimentReport> {
    let started = Instant::now();
    let mut configs = experiment_configs(name)?;
    for c in &mut configs {
        if let Some(s) = seed {
            c.training.seed = s;
        }
    }
    let runs = configs
        .iter()
        .map(|c| run_config(c, &out.join(&c.name)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let final_tv = |loss: LossKind| runs.iter().find(|r| r.loss == loss).and_then(|r| r.final_test_tv);
    let checks = match name {
        "appendix-g-independent" => {
            let cce = final_tv(LossKind::CCE);
            let others = [final_tv(LossKind::UB), final_tv(LossKind::LT)];
            json!({
                "cce_lowest_final_test_tv": cce.map(|c| others.iter().flatten().all(|o| c < *o)),
                "filtered_beats_proposal": runs.iter().map(|r| {
                    r.sample.proposal_tv.map(|p| r.sample.distance_to_target < p)
                }).collect::<Vec<_>>(),
            })
        }
        "appendix-g-markov" => json!({
            "all_test_tv_decreasing": runs.iter().all(|r| r.test_tv_decreasing == Some(true)),
        }),
        _ => json!({
            "filtered_beats_unfiltered": runs.iter().map(|r| {
                r.sample.unfiltered_distance.map(|u| r.sample.distance_to_target < u)
            }).collect::<Vec<_>>(),
        }),
    };
    let report = ExperimentReport {
        experiment: name.to_string(),
        seed: configs.first().map_or(0, |c| c.training.seed),
        runs,
        checks,
    };
    write_json(&out.join("report.json"), &report)?;
    write_timing(out, "experiment", started)?;
    Ok(report)
}

/// Checkpoints written by a run directory, in iteration order.
pub fn run_checkpoints(config: &ExperimentConfig, out: &Path) -> Vec<PathBuf> {
    let t = &config.training;
    (0..=t.iterations / t.snapshot_interval)
        .map(|i| checkpoint_path(out, i * t.snapshot_interval))
        .collect()
}

/// True when `config` asks for metrics that need a density-evaluable proposal.
pub fn wants_test_tv(config: &ExperimentConfig) -> bool {
    config.evaluation.metrics.contains(&Metric::TestTv) && config.proposal.has_density()
}

/// Exit status of `verify`: invariant violations and rejected replays differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyStatus {
    Passed,
    Violated,
    Rejected,
}

impl VerifyStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            VerifyStatus::Passed => 0,
            VerifyStatus::Violated => 1,
            VerifyStatus::Rejected => 2,
        }
    }
}

/// Runs the randomized suites, writing `report.json` and one
/// `failures/<suite>-<index>.json` per failing instance.
pub fn cmd_verify(
    suites: &[Suite],
    seed: u64,
    instances: usize,
    out: &Path,
) -> anyhow::Result<(VerifyReport, VerifyStatus)> {
    let started = Instant::now();
    let suites = if suites.is_empty() { &Suite::ALL[..] } else { suites };
    let report = run_suites(suites, seed, instances);
    write_json(&out.join("report.json"), &report)?;
    for s in &report.suites {
        for f in &s.failures {
            write_json(
                &out.join("failures").join(format!("{}-{}.json", f.suite.name(), f.index)),
                f,
            )?;
        }
    }
    write_timing(out, "verify", started)?;
    let status = if report.all_passed {
        VerifyStatus::Passed
    } else {
        VerifyStatus::Violated
    };
    Ok((report, status))
}

/// Re-checks one dumped instance.
pub fn cmd_replay(path: &Path, out: Option<&Path>) -> anyhow::Result<(ReplayReport, VerifyStatus)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report = match parse_replay(&text) {
        Ok(inst) => replay(&inst),
        Err(e) => ReplayReport::Rejected {
            reason: format!("not an instance: {e}"),
        },
    };
    let status = match &report {
        ReplayReport::Rejected { .. } => VerifyStatus::Rejected,
        ReplayReport::Checked { failures, .. } if failures.is_empty() => VerifyStatus::Passed,
        ReplayReport::Checked { .. } => VerifyStatus::Violated,
    };
    if let Some(out) = out {
        write_json(&out.join("replay.json"), &report)?;
    }
    Ok((report, status))
}
