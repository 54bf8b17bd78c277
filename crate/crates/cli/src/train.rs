//! Minibatch training of a discriminator on target/proposal pairs.

use imh_core::discriminator::{adam_step, AdamConfig, AdamState, Architecture, Discriminator, Network};
use imh_core::distributions::Point;
use imh_core::losses::{loss_eval, LossEval, PairBatch};
use imh_core::proposals::{invert_generator, ProposalKernel};
use imh_core::rng::{stream, ImhRng};
use imh_core::sampler::{INIT_INVERSION_STEPS, INIT_INVERSION_STEP_SIZE};
use imh_core::Result;
use rand::Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Stream indices of the generator family of `training.seed`.
pub mod streams {
    pub const DATASET: u64 = 0;
    pub const INIT: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const LOSS_PAIRS: u64 = 3;
    pub const CHAIN: u64 = 4;
    pub const BASELINE_CHAIN: u64 = 5;
    pub const TEST_TV: u64 = 100;
}

/// Target draws, with latent codes when the proposal is latent-spherical.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub points: Vec<Point>,
    pub latents: Option<Vec<Vec<f64>>>,
}

pub fn dataset(config: &ExperimentConfig) -> Result<TrainingData> {
    let mut rng = stream(config.training.seed, streams::DATASET);
    let points = config
        .target
        .sample(config.training.dataset_size, &mut rng)?
        .points()
        .to_vec();
    let latents = match &config.proposal {
        ProposalKernel::LatentSpherical { generator, .. } => Some(
            points
                .iter()
                .map(|x| {
                    invert_generator(generator, x, INIT_INVERSION_STEPS, INIT_INVERSION_STEP_SIZE)
                        .map(|inv| inv.latent)
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    Ok(TrainingData { points, latents })
}

pub fn init_discriminator(config: &ExperimentConfig) -> Result<Discriminator> {
    let d = &config.discriminator;
    let net = match d.architecture {
        Architecture::Mlp { .. } => Network::init(
            d.architecture.clone(),
            &mut stream(config.training.seed, streams::INIT),
        )?,
        _ => Network::zeros(d.architecture.clone())?,
    };
    Discriminator::new(d.head, d.floor, net)
}

/// `n` pairs `(x, y)` with `x` resampled from the data and `y ~ q(. | x)`.
pub fn sample_pairs(
    data: &TrainingData,
    kernel: &ProposalKernel,
    n: usize,
    rng: &mut ImhRng,
) -> Result<PairBatch> {
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..data.points.len());
        let x = &data.points[i];
        let latent = data.latents.as_ref().map(|l| l[i].as_slice());
        let y = kernel.propose(x, latent, rng)?.point;
        pairs.push((x.clone(), y));
    }
    Ok(PairBatch::new(pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRow {
    pub iteration: u64,
    pub loss: f64,
    pub term_0: f64,
    pub term_1: f64,
    pub guard_hits: usize,
}

impl LossRow {
    pub fn new(iteration: u64, eval: &LossEval) -> Self {
        LossRow {
            iteration,
            loss: eval.value,
            term_0: eval.terms[0],
            term_1: eval.terms[1],
            guard_hits: eval.guard_hits,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub iteration: u64,
    pub disc: Discriminator,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub snapshots: Vec<Snapshot>,
    /// Minibatch loss of every update, before the update.
    pub losses: Vec<LossRow>,
    pub data: TrainingData,
}

/// A failed update; `last_good` holds the parameters before it.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: imh_core::Error,
    pub iteration: u64,
    pub last_good: Discriminator,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training failed at iteration {}: {}", self.iteration, self.error)
    }
}

impl std::error::Error for TrainFailure {}

/// Trains with Adam, calling `on_snapshot` at iteration 0 and every snapshot interval.
pub fn train(
    config: &ExperimentConfig,
    mut on_snapshot: impl FnMut(&Snapshot) -> anyhow::Result<()>,
) -> anyhow::Result<TrainOutcome> {
    let t = &config.training;
    let data = dataset(config)?;
    let mut disc = init_discriminator(config)?;
    let mut state = AdamState::new(
        AdamConfig {
            learning_rate: t.learning_rate,
            ..AdamConfig::default()
        },
        disc.net.param_count(),
    );
    let mut rng = stream(t.seed, streams::BATCHES);
    let mut snapshots = Vec::new();
    let mut losses = Vec::with_capacity(t.iterations as usize);
    let first = Snapshot {
        iteration: 0,
        disc: disc.clone(),
    };
    on_snapshot(&first)?;
    snapshots.push(first);
    for iteration in 1..=t.iterations {
        let step = (|| -> Result<LossEval> {
            let batch = sample_pairs(&data, &config.proposal, t.batch_size, &mut rng)?;
            let eval = loss_eval(config.loss, &disc, &batch)?;
            let mut params = disc.net.params().to_vec();
            adam_step(&mut params, &eval.grads, &mut state)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(imh_core::Error::NonFinite("updated parameters".into()));
            }
            disc.net.params_mut().copy_from_slice(&params);
            Ok(eval)
        })();
        match step {
            Ok(eval) => losses.push(LossRow::new(iteration, &eval)),
            Err(error) => {
                return Err(TrainFailure {
                    error,
                    iteration,
                    last_good: disc,
                }
                .into())
            }
        }
        if iteration % t.snapshot_interval == 0 {
            let snap = Snapshot {
                iteration,
                disc: disc.clone(),
            };
            on_snapshot(&snap)?;
            snapshots.push(snap);
        }
    }
    Ok(TrainOutcome {
        snapshots,
        losses,
        data,
    })
}
