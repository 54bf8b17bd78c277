//! Analytic densities used as targets, proposals and oracles.
//!
//! All shipped specs are one dimensional. Finite-categorical states are
//! encoded as a single coordinate holding the state index.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;

/// A point in `R^D`, `D >= 1`, with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidSpec("point must have dimension >= 1".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(Point(coords))
    }

    /// One-dimensional point. Panics on a non-finite coordinate.
    pub fn scalar(x: f64) -> Self {
        assert!(x.is_finite(), "non-finite coordinate {x}");
        Point(vec![x])
    }

    /// Finite-state point for state `k`.
    pub fn state(k: usize) -> Self {
        Point(vec![k as f64])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    /// Interprets the point as a finite-state index.
    pub fn as_state(&self, states: usize) -> Result<usize> {
        if self.0.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: self.0.len(),
            });
        }
        let v = self.0[0];
        if v < 0.0 || v.fract() != 0.0 || v >= states as f64 {
            return Err(Error::IndexOutOfRange {
                index: if v < 0.0 { usize::MAX } else { v as usize },
                states,
            });
        }
        Ok(v as usize)
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleSource {
    Target,
    Proposal,
    Chain,
}

/// Non-empty ordered list of points of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<Point>,
    pub source: SampleSource,
}

impl SampleSet {
    pub fn new(points: Vec<Point>, source: SampleSource) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidSpec("sample set must be non-empty".into()))?;
        let dim = first.dim();
        if let Some(bad) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(SampleSet { points, source })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// First coordinates, the common case for 1D specs.
    pub fn scalars(&self) -> Vec<f64> {
        self.points.iter().map(Point::x).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub stddev: f64,
}

/// Analytic density of a target or proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensitySpec {
    Gaussian { mean: f64, stddev: f64 },
    GaussianMixture { components: Vec<MixtureComponent> },
    FiniteCategorical { probs: Vec<f64> },
}

impl DensitySpec {
    pub fn gaussian(mean: f64, stddev: f64) -> Result<Self> {
        let spec = DensitySpec::Gaussian { mean, stddev };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        let spec = DensitySpec::GaussianMixture { components };
        spec.validate()?;
        Ok(spec)
    }

    pub fn categorical(probs: Vec<f64>) -> Result<Self> {
        let spec = DensitySpec::FiniteCategorical { probs };
        spec.validate()?;
        Ok(spec)
    }

    /// The synthetic bimodal target: 0.5 N(-2, 0.5) + 0.5 N(2, 0.7).
    pub fn two_mode_mixture() -> Self {
        DensitySpec::GaussianMixture {
            components: vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: -2.0,
                    stddev: 0.5,
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: 2.0,
                    stddev: 0.7,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |s: f64| s.is_finite() && s > 0.0;
        match self {
            DensitySpec::Gaussian { mean, stddev } => {
                if !mean.is_finite() || !finite_pos(*stddev) {
                    return Err(Error::InvalidSpec(format!(
                        "gaussian needs finite mean and stddev > 0, got ({mean}, {stddev})"
                    )));
                }
            }
            DensitySpec::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidSpec("mixture has no components".into()));
                }
                for c in components {
                    if !(c.weight.is_finite() && c.weight >= 0.0)
                        || !c.mean.is_finite()
                        || !finite_pos(c.stddev)
                    {
                        return Err(Error::InvalidSpec(format!("bad mixture component {c:?}")));
                    }
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidSpec(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
            }
            DensitySpec::FiniteCategorical { probs } => {
                if probs.is_empty() {
                    return Err(Error::InvalidSpec("categorical table is empty".into()));
                }
                if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::InvalidSpec("categorical entries must be >= 0".into()));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidSpec(format!(
                        "categorical table sums to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Data dimension. All shipped specs are scalar.
    pub fn dim(&self) -> usize {
        1
    }

    pub fn is_finite_state(&self) -> bool {
        matches!(self, DensitySpec::FiniteCategorical { .. })
    }

    fn check_dim(&self, x: &Point) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        Ok(())
    }

    /// Exact density (mass for categorical specs) at `x`.
    pub fn density(&self, x: &Point) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            DensitySpec::Gaussian { mean, stddev } => normal_pdf(x.x(), *mean, *stddev),
            DensitySpec::GaussianMixture { components } => components
                .iter()
                .map(|c| c.weight * normal_pdf(x.x(), c.mean, c.stddev))
                .sum(),
            DensitySpec::FiniteCategorical { probs } => probs[x.as_state(probs.len())?],
        })
    }

    /// Log-density; errors with [`Error::ZeroDensity`] instead of returning `-inf`.
    pub fn log_density(&self, x: &Point) -> Result<f64> {
        self.check_dim(x)?;
        let value = match self {
            DensitySpec::Gaussian { mean, stddev } => normal_ln_pdf(x.x(), *mean, *stddev),
            DensitySpec::GaussianMixture { components } => {
                let terms: Vec<f64> = components
                    .iter()
                    .filter(|c| c.weight > 0.0)
                    .map(|c| c.weight.ln() + normal_ln_pdf(x.x(), c.mean, c.stddev))
                    .collect();
                log_sum_exp(&terms)
            }
            DensitySpec::FiniteCategorical { probs } => probs[x.as_state(probs.len())?].ln(),
        };
        if value == f64::NEG_INFINITY {
            return Err(Error::ZeroDensity);
        }
        Ok(value)
    }

    /// Cumulative distribution function of a scalar continuous spec.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        match self {
            DensitySpec::Gaussian { mean, stddev } => Ok(normal_cdf(x, *mean, *stddev)),
            DensitySpec::GaussianMixture { components } => Ok(components
                .iter()
                .map(|c| c.weight * normal_cdf(x, c.mean, c.stddev))
                .sum()),
            DensitySpec::FiniteCategorical { .. } => Err(Error::Incompatible(
                "cdf is only defined for continuous specs".into(),
            )),
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self {
            DensitySpec::Gaussian { mean, stddev } => {
                let z: f64 = StandardNormal.sample(rng);
                Point(vec![mean + stddev * z])
            }
            DensitySpec::GaussianMixture { components } => {
                let weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
                let c = &components[inverse_cdf_index(&weights, rng.random())];
                let z: f64 = StandardNormal.sample(rng);
                Point(vec![c.mean + c.stddev * z])
            }
            DensitySpec::FiniteCategorical { probs } => {
                Point::state(inverse_cdf_index(probs, rng.random()))
            }
        }
    }

    /// `n` i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleSet> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidSpec("sample count must be >= 1".into()));
        }
        let points = (0..n).map(|_| self.sample_one(rng)).collect();
        SampleSet::new(points, SampleSource::Target)
    }
}

/// Index `i` with `cum[i-1] <= u < cum[i]` over the cumulative weights.
/// Falls back to the last positive entry when rounding leaves `u` past the total.
pub(crate) fn inverse_cdf_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

pub fn normal_pdf(x: f64, mean: f64, stddev: f64) -> f64 {
    let z = (x - mean) / stddev;
    (-0.5 * z * z).exp() / (stddev * (2.0 * PI).sqrt())
}

pub fn normal_ln_pdf(x: f64, mean: f64, stddev: f64) -> f64 {
    let z = (x - mean) / stddev;
    -0.5 * z * z - stddev.ln() - 0.5 * (2.0 * PI).ln()
}

pub fn normal_cdf(x: f64, mean: f64, stddev: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / (stddev * std::f64::consts::SQRT_2))
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}
