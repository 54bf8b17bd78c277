//! Snapshot metrics: test-TV, filtered chains and the density probe.

use imh_core::bounds::{
    histogram_tv, test_tv_metric, tv_discrete, QuadratureGrid, TestTvMethod, HISTOGRAM_BINS,
};
use imh_core::discriminator::{Architecture, Discriminator, HeadKind, Network};
use imh_core::distributions::{DensitySpec, Point};
use imh_core::losses::{dre_extract, loss_eval, unnormalized_density_probe, LossKind, PairBatch};
use imh_core::rng::{derive_seed, stream};
use imh_core::sampler::{run_chain, AcceptanceRule, Chain};
use imh_core::Result;
use serde::Serialize;

use crate::config::{ExperimentConfig, Metric, RuleKind};
use crate::train::{sample_pairs, streams, TrainingData};

/// How density ratios are obtained for evaluation.
#[derive(Debug, Clone)]
pub enum RatioSource {
    Trained(Discriminator),
    /// The analytic ratio in place of a discriminator.
    Exact,
}

impl RatioSource {
    pub fn ratio(
        &self,
        config: &ExperimentConfig,
        x: &Point,
        y: &Point,
    ) -> Result<f64> {
        match self {
            RatioSource::Trained(disc) => dre_extract(config.loss, disc, x, y),
            RatioSource::Exact => {
                let p = &config.target;
                let q = &config.proposal;
                Ok((p.log_density(x)? + q.log_density(y, x)?
                    - p.log_density(y)?
                    - q.log_density(x, y)?)
                .exp())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestTvSummary {
    pub mean: f64,
    /// Sample standard deviation over repetitions.
    pub spread: f64,
    /// Mean Monte-Carlo standard error of one repetition.
    pub std_error: f64,
}

/// Test-TV repeated with the configured evaluation seeds, which are shared
/// by every snapshot of a run.
pub fn test_tv(config: &ExperimentConfig, source: &RatioSource) -> Result<TestTvSummary> {
    let e = &config.evaluation;
    let dre = |x: &Point, y: &Point| source.ratio(config, x, y);
    let mut values = Vec::with_capacity(e.repetitions);
    let mut errors = Vec::with_capacity(e.repetitions);
    for rep in 0..e.repetitions {
        let method = TestTvMethod::MonteCarlo {
            samples: e.test_tv_samples,
            seed: derive_seed(config.training.seed, streams::TEST_TV + rep as u64),
        };
        let r = test_tv_metric(&config.target, &config.proposal, &dre, method)?;
        values.push(r.value);
        errors.push(r.std_error.unwrap_or(0.0));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let spread = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(TestTvSummary {
        mean,
        spread,
        std_error: errors.iter().sum::<f64>() / n,
    })
}

/// Chain started from the configured point or the first training point.
pub fn filtered_chain(
    config: &ExperimentConfig,
    rule: &AcceptanceRule,
    data: &TrainingData,
    length: usize,
    seed_stream: u64,
) -> Result<Chain> {
    let init = config
        .sampler
        .init
        .clone()
        .unwrap_or_else(|| data.points[0].clone());
    let latent = match &config.sampler.init {
        Some(_) => None,
        None => data.latents.as_ref().map(|l| l[0].clone()),
    };
    run_chain(
        rule,
        &config.proposal,
        &init,
        latent,
        length,
        derive_seed(config.training.seed, seed_stream),
    )
}

pub fn acceptance_rule(config: &ExperimentConfig, disc: Option<&Discriminator>) -> anyhow::Result<AcceptanceRule> {
    Ok(match (config.sampler.rule, disc) {
        (RuleKind::Analytic, _) => AcceptanceRule::Analytic {
            target: config.target.clone(),
            proposal: config.proposal.clone(),
        },
        (RuleKind::Factorized, Some(d)) => AcceptanceRule::Factorized { disc: d.clone() },
        (RuleKind::Pairwise, Some(d)) => AcceptanceRule::Pairwise { disc: d.clone() },
        (rule, None) => anyhow::bail!("{rule:?} acceptance needs a discriminator checkpoint"),
    })
}

/// A pairwise rule that accepts every proposal: the raw proposal chain.
pub fn unfiltered_rule() -> AcceptanceRule {
    let arch = Architecture::Mlp {
        input_dim: 1,
        hidden: vec![],
    };
    let net = Network::zeros(arch).expect("valid architecture");
    AcceptanceRule::Pairwise {
        disc: Discriminator::new(HeadKind::PairwiseLogitDiff, 0.0, net).expect("valid"),
    }
}

/// Distance between the chain's empirical law and the target: histogram TV
/// for continuous targets, exact frequency TV for finite ones.
pub fn chain_distance(target: &DensitySpec, chain: &Chain) -> Result<f64> {
    match target {
        DensitySpec::FiniteCategorical { probs } => {
            let mut freq = vec![0.0; probs.len()];
            for p in &chain.points {
                freq[p.as_state(probs.len())?] += 1.0;
            }
            let n = chain.len() as f64;
            freq.iter_mut().for_each(|f| *f /= n);
            tv_discrete(&freq, probs)
        }
        _ => histogram_tv(
            &chain.scalars(),
            target,
            QuadratureGrid::default().half_width,
            HISTOGRAM_BINS,
        ),
    }
}

/// Pearson correlation of the log probe with `ln p(x) - ln p(reference)` on the grid.
pub fn probe_correlation(config: &ExperimentConfig, disc: &Discriminator) -> Result<f64> {
    let pc = &config.evaluation.probe;
    let xs: Vec<Point> = (0..pc.points)
        .map(|i| {
            Point::scalar(-pc.half_width + 2.0 * pc.half_width * i as f64 / (pc.points - 1) as f64)
        })
        .collect();
    let reference = Point::scalar(pc.reference);
    let probe = unnormalized_density_probe(config.loss, disc, &reference, &xs)?;
    let estimated: Vec<f64> = probe.iter().map(|v| v.ln()).collect();
    let exact = xs
        .iter()
        .map(|x| Ok(config.target.log_density(x)? - config.target.log_density(&reference)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(pearson(&estimated, &exact))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub loss: Option<f64>,
    pub test_tv_mean: Option<f64>,
    pub test_tv_spread: Option<f64>,
    pub test_tv_std_error: Option<f64>,
    pub rejection_rate: Option<f64>,
    pub histogram_tv: Option<f64>,
    pub probe_pearson: Option<f64>,
}

/// Fixed pairs on which every snapshot's loss is reported.
pub fn loss_pairs(config: &ExperimentConfig, data: &TrainingData) -> Result<PairBatch> {
    let mut rng = stream(config.training.seed, streams::LOSS_PAIRS);
    sample_pairs(data, &config.proposal, config.evaluation.loss_pairs, &mut rng)
}

pub fn evaluate_snapshot(
    config: &ExperimentConfig,
    iteration: u64,
    source: &RatioSource,
    data: &TrainingData,
    pairs: &PairBatch,
) -> anyhow::Result<MetricsRecord> {
    let metrics = &config.evaluation.metrics;
    let disc = match source {
        RatioSource::Trained(d) => Some(d),
        RatioSource::Exact => None,
    };
    let mut record = MetricsRecord {
        iteration,
        loss: None,
        test_tv_mean: None,
        test_tv_spread: None,
        test_tv_std_error: None,
        rejection_rate: None,
        histogram_tv: None,
        probe_pearson: None,
    };
    if let Some(d) = disc {
        record.loss = Some(loss_eval(config.loss, d, pairs)?.value);
    }
    if metrics.contains(&Metric::TestTv) && config.proposal.has_density() {
        let s = test_tv(config, source)?;
        record.test_tv_mean = Some(s.mean);
        record.test_tv_spread = Some(s.spread);
        record.test_tv_std_error = Some(s.std_error);
    }
    if metrics.contains(&Metric::Chain) {
        let rule = match disc {
            Some(d) => acceptance_rule(config, Some(d))?,
            None => AcceptanceRule::Analytic {
                target: config.target.clone(),
                proposal: config.proposal.clone(),
            },
        };
        let chain = filtered_chain(config, &rule, data, config.evaluation.chain_length, streams::CHAIN)?;
        record.rejection_rate = Some(chain.rejection_rate());
        record.histogram_tv = Some(chain_distance(&config.target, &chain)?);
    }
    if let (true, Some(d)) = (metrics.contains(&Metric::Probe), disc) {
        if config.proposal.is_symmetric() && config.loss != LossKind::CCE {
            record.probe_pearson = Some(probe_correlation(config, d)?);
        }
    }
    Ok(record)
}
