//! Experiment configuration: one JSON document per run.

use std::f64::consts::FRAC_PI_3;
use std::path::Path;

use anyhow::{bail, Context};
use imh_core::discriminator::{Architecture, HeadKind};
use imh_core::distributions::{DensitySpec, Point};
use imh_core::losses::LossKind;
use imh_core::proposals::{GeneratorMap, ProposalKernel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub target: DensitySpec,
    pub proposal: ProposalKernel,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossKind,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub architecture: Architecture,
    pub head: HeadKind,
    /// Output floor `b`.
    pub floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub snapshot_interval: u64,
    /// Target draws forming the training set; batches resample it with replacement.
    pub dataset_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// l1 density-ratio error, Monte-Carlo over the configured samples.
    TestTv,
    /// Rejection rate and histogram distance of a filtered chain.
    Chain,
    /// Log-ratio probe against the analytic log density.
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub metrics: Vec<Metric>,
    pub test_tv_samples: usize,
    pub repetitions: usize,
    pub chain_length: usize,
    /// Pairs in the fixed batch on which snapshot losses are reported.
    pub loss_pairs: usize,
    pub probe: ProbeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub reference: f64,
    pub half_width: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Analytic,
    Factorized,
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub rule: RuleKind,
    /// Starting point; the first training point when absent.
    pub init: Option<Point>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.target.validate()?;
        self.proposal.validate()?;
        if !(0.0..1.0).contains(&self.discriminator.floor) {
            bail!("discriminator floor must lie in [0, 1)");
        }
        self.loss.check_head(self.discriminator.head)?;
        let t = &self.training;
        if t.snapshot_interval == 0 {
            bail!("snapshot interval must be >= 1");
        }
        if !t.iterations.is_multiple_of(t.snapshot_interval) {
            bail!(
                "snapshot interval {} does not divide {} iterations",
                t.snapshot_interval,
                t.iterations
            );
        }
        if t.batch_size == 0 || t.dataset_size == 0 {
            bail!("batch and dataset sizes must be >= 1");
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            bail!("learning rate must be > 0");
        }
        let e = &self.evaluation;
        if e.repetitions == 0 || e.test_tv_samples < 2 || e.chain_length == 0 || e.loss_pairs == 0 {
            bail!("evaluation counts must be positive");
        }
        if e.probe.points < 2 || !(e.probe.half_width > 0.0) {
            bail!("probe grid needs >= 2 points and a positive width");
        }
        if self.sampler.rule == RuleKind::Factorized && !self.proposal.is_independent() {
            bail!("factorized acceptance requires an independent proposal");
        }
        if let (Some(k), DensitySpec::FiniteCategorical { probs }) =
            (self.proposal.states(), &self.target)
        {
            if k != probs.len() {
                bail!("proposal has {k} states, target {}", probs.len());
            }
        }
        Ok(())
    }
}

pub const EXPERIMENTS: [&str; 3] = ["appendix-g-independent", "appendix-g-markov", "latent-spherical"];

fn mlp() -> Architecture {
    Architecture::Mlp {
        input_dim: 1,
        hidden: vec![100, 100],
    }
}

fn base(name: &str, proposal: ProposalKernel, loss: LossKind, head: HeadKind, rule: RuleKind) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        target: DensitySpec::two_mode_mixture(),
        proposal,
        discriminator: DiscriminatorConfig {
            architecture: mlp(),
            head,
            floor: 0.0,
        },
        loss,
        training: TrainingConfig {
            iterations: 1000,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            snapshot_interval: 250,
            dataset_size: 5000,
        },
        evaluation: EvaluationConfig {
            metrics: vec![Metric::TestTv, Metric::Chain],
            test_tv_samples: 100_000,
            repetitions: 5,
            chain_length: 100_000,
            loss_pairs: 5000,
            probe: ProbeConfig {
                reference: 0.0,
                half_width: 4.0,
                points: 101,
            },
        },
        sampler: SamplerConfig { rule, init: None },
    }
}

/// Mixture target, independent `N(0, 2)` proposal.
pub fn independent_config(loss: LossKind) -> ExperimentConfig {
    let proposal = ProposalKernel::Independent {
        density: DensitySpec::gaussian(0.0, 2.0).expect("valid"),
    };
    let (head, rule) = match loss {
        LossKind::CCE => (HeadKind::FactorizedIndependent, RuleKind::Factorized),
        _ => (HeadKind::PairwiseLogitDiff, RuleKind::Pairwise),
    };
    base(&format!("independent-{}", loss.name()), proposal, loss, head, rule)
}

/// Mixture target, random-walk proposal with unit step.
pub fn markov_config(loss: LossKind) -> ExperimentConfig {
    let mut config = base(
        &format!("markov-{}", loss.name()),
        ProposalKernel::RandomWalk { stddev: 1.0 },
        loss,
        HeadKind::PairwiseLogitDiff,
        RuleKind::Pairwise,
    );
    config.evaluation.metrics.push(Metric::Probe);
    config
}

/// Mixture target, spherical interpolation in the latent space of the identity generator.
pub fn latent_config() -> ExperimentConfig {
    let proposal = ProposalKernel::LatentSpherical {
        angle: FRAC_PI_3,
        generator: GeneratorMap::Identity { dim: 1 },
    };
    let mut config = base(
        "latent-spherical-UB",
        proposal,
        LossKind::UB,
        HeadKind::PairwiseLogitDiff,
        RuleKind::Pairwise,
    );
    config.evaluation.metrics = vec![Metric::Chain];
    config
}

/// Runs making up a named experiment.
pub fn experiment_configs(name: &str) -> anyhow::Result<Vec<ExperimentConfig>> {
    Ok(match name {
        "appendix-g-independent" => vec![
            independent_config(LossKind::CCE),
            independent_config(LossKind::UB),
            independent_config(LossKind::LT),
        ],
        "appendix-g-markov" => vec![markov_config(LossKind::UB), markov_config(LossKind::MCE)],
        "latent-spherical" => vec![latent_config()],
        other => bail!("unknown experiment {other:?}; expected one of {EXPERIMENTS:?}"),
    })
}
