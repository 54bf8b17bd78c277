//! Metropolis-Hastings chains with analytic, factorized and pairwise
//! acceptance rules.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::discriminator::{Discriminator, HeadKind};
use crate::distributions::{DensitySpec, Point};
use crate::error::{Error, Result};
use crate::proposals::{invert_generator, ProposalKernel};
use crate::rng::seeded;

/// Gradient-descent settings used to recover the latent code of a chain's
/// starting point when none is supplied.
pub const INIT_INVERSION_STEPS: usize = 500;
pub const INIT_INVERSION_STEP_SIZE: f64 = 0.1;

#[derive(Debug, Clone)]
pub enum AcceptanceRule {
    /// `min{1, p(x) q(y|x) / (p(y) q(x|y))}` from exact densities.
    Analytic {
        target: DensitySpec,
        proposal: ProposalKernel,
    },
    /// `min{1, d(x)(1 - d(y)) / ((1 - d(x)) d(y))}` for independent proposals.
    Factorized { disc: Discriminator },
    /// `min{1, d(x, y) / d(y, x)}`.
    Pairwise { disc: Discriminator },
}

impl AcceptanceRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            AcceptanceRule::Analytic { target, proposal } => {
                target.validate()?;
                proposal.validate()?;
                if !proposal.has_density() {
                    return Err(Error::ImplicitKernel);
                }
            }
            AcceptanceRule::Factorized { disc } => {
                disc.validate()?;
                if disc.head != HeadKind::FactorizedIndependent {
                    return Err(Error::Incompatible(
                        "factorized acceptance needs the factorized head".into(),
                    ));
                }
            }
            AcceptanceRule::Pairwise { disc } => disc.validate()?,
        }
        Ok(())
    }

    /// Acceptance probability of moving from the current point `y` to the proposal `x`.
    pub fn acceptance_prob(&self, x: &Point, y: &Point) -> Result<f64> {
        let ratio = match self {
            AcceptanceRule::Analytic { target, proposal } => {
                if target.is_finite_state() {
                    let num = target.density(x)? * proposal.density(y, x)?;
                    let den = target.density(y)? * proposal.density(x, y)?;
                    if den <= 0.0 {
                        return Err(Error::ZeroDenominator);
                    }
                    num / den
                } else {
                    (target.log_density(x)? + proposal.log_density(y, x)?
                        - target.log_density(y)?
                        - proposal.log_density(x, y)?)
                        .exp()
                }
            }
            AcceptanceRule::Factorized { disc } => {
                let dx = disc.point_value(x)?;
                let dy = disc.point_value(y)?;
                let den = (1.0 - dx) * dy;
                if den <= 0.0 {
                    return Err(Error::ZeroDenominator);
                }
                dx * (1.0 - dy) / den
            }
            AcceptanceRule::Pairwise { disc } => {
                let f = disc.pair_forward(x, y)?;
                if f.d_yx <= 0.0 {
                    return Err(Error::ZeroDenominator);
                }
                f.d_xy / f.d_yx
            }
        };
        if ratio.is_nan() {
            return Err(Error::NonFinite("acceptance ratio".into()));
        }
        Ok(ratio.min(1.0))
    }
}

/// States after each step, with acceptance flags and threaded latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub init: Point,
    pub points: Vec<Point>,
    pub accepted: Vec<bool>,
    pub latents: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rejection_rate(&self) -> f64 {
        let rejected = self.accepted.iter().filter(|a| !**a).count();
        rejected as f64 / self.accepted.len() as f64
    }

    /// First coordinate of every state.
    pub fn scalars(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.coords()[0]).collect()
    }

    /// CSV with `step, accepted, coord_*` and `latent_*` when present.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self.init.dim();
        let latent_dim = self
            .latents
            .as_ref()
            .and_then(|l| l.first())
            .map_or(0, Vec::len);
        let mut header = vec!["step".to_string(), "accepted".to_string()];
        header.extend((0..dim).map(|i| format!("coord_{i}")));
        header.extend((0..latent_dim).map(|i| format!("latent_{i}")));
        out.write_record(&header)?;
        for (step, (point, accepted)) in self.points.iter().zip(&self.accepted).enumerate() {
            let mut row = vec![(step + 1).to_string(), u8::from(*accepted).to_string()];
            row.extend(point.coords().iter().map(f64::to_string));
            if let Some(latents) = &self.latents {
                row.extend(latents[step].iter().map(f64::to_string));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs `n` Metropolis-Hastings steps from `init`.
///
/// Every step draws a proposal and one uniform `u`, accepting iff `u < P`,
/// so rules with equal probabilities consume identical random streams. A
/// latent-spherical kernel needs the code of `init`; without `init_latent`
/// it is recovered by inverting the generator.
pub fn run_chain(
    rule: &AcceptanceRule,
    kernel: &ProposalKernel,
    init: &Point,
    init_latent: Option<Vec<f64>>,
    n: usize,
    seed: u64,
) -> Result<Chain> {
    rule.validate()?;
    kernel.validate()?;
    if n == 0 {
        return Err(Error::InvalidSpec("chain length must be >= 1".into()));
    }
    if matches!(rule, AcceptanceRule::Factorized { .. }) && !kernel.is_independent() {
        return Err(Error::Incompatible(
            "factorized acceptance requires an independent proposal".into(),
        ));
    }
    let mut latent = match kernel {
        ProposalKernel::LatentSpherical { generator, .. } => Some(match init_latent {
            Some(z) => z,
            None => {
                invert_generator(generator, init, INIT_INVERSION_STEPS, INIT_INVERSION_STEP_SIZE)?
                    .latent
            }
        }),
        _ => None,
    };
    let mut rng = seeded(seed);
    let mut current = init.clone();
    let mut points = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    let mut latents = latent.as_ref().map(|_| Vec::with_capacity(n));
    for _ in 0..n {
        let proposal = kernel.propose(&current, latent.as_deref(), &mut rng)?;
        let prob = rule.acceptance_prob(&proposal.point, &current)?;
        let u: f64 = rng.random();
        let accept = u < prob;
        if accept {
            current = proposal.point;
            if proposal.latent.is_some() {
                latent = proposal.latent;
            }
        }
        points.push(current.clone());
        accepted.push(accept);
        if let (Some(store), Some(z)) = (latents.as_mut(), latent.as_ref()) {
            store.push(z.clone());
        }
    }
    Ok(Chain {
        init: init.clone(),
        points,
        accepted,
        latents,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStats {
    pub length: usize,
    pub rejection_rate: f64,
    pub unique_count: usize,
    /// Autocorrelation of the first coordinate at lags `1..=L`.
    pub autocorrelation: Vec<f64>,
}

pub fn chain_stats(chain: &Chain, max_lag: usize) -> Result<ChainStats> {
    if chain.is_empty() {
        return Err(Error::InvalidSpec("empty chain".into()));
    }
    let unique: HashSet<Vec<u64>> = chain
        .points
        .iter()
        .map(|p| p.coords().iter().map(|c| c.to_bits()).collect())
        .collect();
    Ok(ChainStats {
        length: chain.len(),
        rejection_rate: chain.rejection_rate(),
        unique_count: unique.len(),
        autocorrelation: autocorrelation(&chain.scalars(), max_lag),
    })
}

/// Sample autocorrelation at lags `1..=max_lag`; zero for a constant series.
pub fn autocorrelation(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (1..=max_lag)
        .map(|lag| {
            if lag >= n || var == 0.0 {
                return 0.0;
            }
            let cov: f64 = xs[..n - lag]
                .iter()
                .zip(&xs[lag..])
                .map(|(a, b)| (a - mean) * (b - mean))
                .sum();
            cov / var
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminator::{Architecture, Network};
    use crate::proposals::GeneratorMap;

    fn point_table(head: HeadKind, logits: Vec<f64>, floor: f64) -> Discriminator {
        let arch = Architecture::PointTable {
            states: logits.len(),
        };
        Discriminator::new(head, floor, Network::from_params(arch, logits).unwrap()).unwrap()
    }

    fn mlp_zero() -> Discriminator {
        let arch = Architecture::Mlp {
            input_dim: 1,
            hidden: vec![4],
        };
        Discriminator::new(HeadKind::PairwiseLogitDiff, 0.1, Network::zeros(arch).unwrap())
            .unwrap()
    }

    #[test]
    fn pairwise_probabilities() {
        let rule = AcceptanceRule::Pairwise { disc: mlp_zero() };
        let p = rule
            .acceptance_prob(&Point::scalar(1.0), &Point::scalar(-3.0))
            .unwrap();
        assert_eq!(p, 1.0);

        // d(0,1) = 0.25, d(1,0) = 0.5 on a pair table
        let s = |d: f64| (d / (1.0 - d)).ln();
        let arch = Architecture::PairTable { states: 2 };
        let net = Network::from_params(arch, vec![0.0, s(0.25), s(0.5), 0.0]).unwrap();
        let disc = Discriminator::new(HeadKind::Tabular, 0.0, net).unwrap();
        let rule = AcceptanceRule::Pairwise { disc };
        let p = rule
            .acceptance_prob(&Point::state(0), &Point::state(1))
            .unwrap();
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn analytic_symmetric_equal_density() {
        let rule = AcceptanceRule::Analytic {
            target: DensitySpec::gaussian(0.0, 1.0).unwrap(),
            proposal: ProposalKernel::RandomWalk { stddev: 1.0 },
        };
        let p = rule
            .acceptance_prob(&Point::scalar(1.5), &Point::scalar(-1.5))
            .unwrap();
        assert!((p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn factorized_matches_pairwise_with_factorized_head() {
        let disc = point_table(HeadKind::FactorizedIndependent, vec![0.3, -1.2, 2.0], 0.1);
        let a = AcceptanceRule::Factorized { disc: disc.clone() };
        let b = AcceptanceRule::Pairwise { disc };
        for x in 0..3 {
            for y in 0..3 {
                let (px, py) = (Point::state(x), Point::state(y));
                let pa = a.acceptance_prob(&px, &py).unwrap();
                let pb = b.acceptance_prob(&px, &py).unwrap();
                assert!((pa - pb).abs() <= 1e-15 * pa.max(1e-300), "{pa} {pb}");
            }
        }
    }

    #[test]
    fn always_accept_with_independent_proposal_is_iid() {
        let density = DensitySpec::gaussian(0.0, 2.0).unwrap();
        let kernel = ProposalKernel::Independent { density };
        let arch = Architecture::Mlp {
            input_dim: 1,
            hidden: vec![3],
        };
        let disc =
            Discriminator::new(HeadKind::FactorizedIndependent, 0.1, Network::zeros(arch).unwrap())
                .unwrap();
        let rule = AcceptanceRule::Factorized { disc };
        let chain = run_chain(&rule, &kernel, &Point::scalar(0.0), None, 1000, 5).unwrap();
        assert_eq!(chain.rejection_rate(), 0.0);
        assert_eq!(chain_stats(&chain, 1).unwrap().unique_count, 1000);
    }

    #[test]
    fn factorized_rule_rejects_markov_kernel() {
        let disc = point_table(HeadKind::FactorizedIndependent, vec![0.0, 0.0], 0.1);
        let rule = AcceptanceRule::Factorized { disc };
        let kernel = ProposalKernel::FiniteMatrix {
            matrix: vec![vec![0.9, 0.2], vec![0.1, 0.8]],
        };
        assert!(run_chain(&rule, &kernel, &Point::state(0), None, 10, 0).is_err());
    }

    #[test]
    fn stats_of_stuck_chain() {
        let chain = Chain {
            init: Point::scalar(2.0),
            points: vec![Point::scalar(2.0); 50],
            accepted: vec![false; 50],
            latents: None,
            seed: 0,
        };
        let s = chain_stats(&chain, 3).unwrap();
        assert_eq!(s.rejection_rate, 1.0);
        assert_eq!(s.unique_count, 1);
        assert_eq!(s.autocorrelation, vec![0.0; 3]);
    }

    #[test]
    fn latent_is_threaded_and_inverted() {
        let kernel = ProposalKernel::LatentSpherical {
            angle: std::f64::consts::FRAC_PI_3,
            generator: GeneratorMap::Identity { dim: 1 },
        };
        let rule = AcceptanceRule::Pairwise { disc: mlp_zero() };
        let chain = run_chain(&rule, &kernel, &Point::scalar(0.5), None, 20, 3).unwrap();
        let latents = chain.latents.as_ref().unwrap();
        for (p, z) in chain.points.iter().zip(latents) {
            assert_eq!(p.coords(), &z[..]);
        }
    }

    #[test]
    fn chain_is_reproducible() {
        let rule = AcceptanceRule::Analytic {
            target: DensitySpec::two_mode_mixture(),
            proposal: ProposalKernel::RandomWalk { stddev: 1.0 },
        };
        let kernel = ProposalKernel::RandomWalk { stddev: 1.0 };
        let a = run_chain(&rule, &kernel, &Point::scalar(0.0), None, 500, 11).unwrap();
        let b = run_chain(&rule, &kernel, &Point::scalar(0.0), None, 500, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let chain = Chain {
            init: Point::scalar(0.0),
            points: vec![Point::scalar(1.5), Point::scalar(1.5)],
            accepted: vec![true, false],
            latents: Some(vec![vec![0.25], vec![0.25]]),
            seed: 0,
        };
        let mut buf = Vec::new();
        chain.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,accepted,coord_0,latent_0\n1,1,1.5,0.25\n2,0,1.5,0.25\n"
        );
    }
}
