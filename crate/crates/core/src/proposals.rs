//! Conditional proposal kernels `q(x | y)`.
//!
//! Random-walk, independent and finite-matrix kernels expose their density.
//! The latent-spherical kernel is implicit: it can only be sampled, by moving
//! the latent code of the current point along a great circle
//! `z_x = cos(t) z_y + sin(t) v` with `v ~ N(0, I)` and decoding `x = g(z_x)`.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{inverse_cdf_index, normal_ln_pdf, normal_pdf, DensitySpec, Point};
use crate::error::{Error, Result};

const COLUMN_TOL: f64 = 1e-12;

/// Deterministic map from latent space to data space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorMap {
    Identity { dim: usize },
    /// `g(z) = A z + c`, `matrix` is row-major with shape output x latent.
    Affine { matrix: Vec<Vec<f64>>, bias: Vec<f64> },
    /// `g(z) = tanh(A z + c)` applied componentwise.
    TanhAffine { matrix: Vec<Vec<f64>>, bias: Vec<f64> },
}

impl GeneratorMap {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorMap::Identity { dim } if *dim == 0 => {
                Err(Error::InvalidSpec("identity generator needs dim >= 1".into()))
            }
            GeneratorMap::Identity { .. } => Ok(()),
            GeneratorMap::Affine { matrix, bias } | GeneratorMap::TanhAffine { matrix, bias } => {
                if matrix.is_empty() || matrix[0].is_empty() {
                    return Err(Error::InvalidSpec("generator matrix is empty".into()));
                }
                let cols = matrix[0].len();
                if matrix.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidSpec("generator matrix is ragged".into()));
                }
                if bias.len() != matrix.len() {
                    return Err(Error::LengthMismatch(bias.len(), matrix.len()));
                }
                if matrix.iter().flatten().chain(bias).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("generator parameters".into()));
                }
                Ok(())
            }
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            GeneratorMap::Identity { dim } => *dim,
            GeneratorMap::Affine { matrix, .. } | GeneratorMap::TanhAffine { matrix, .. } => {
                matrix[0].len()
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            GeneratorMap::Identity { dim } => *dim,
            GeneratorMap::Affine { matrix, .. } | GeneratorMap::TanhAffine { matrix, .. } => {
                matrix.len()
            }
        }
    }

    fn affine(matrix: &[Vec<f64>], bias: &[f64], z: &[f64]) -> Vec<f64> {
        matrix
            .iter()
            .zip(bias)
            .map(|(row, c)| row.iter().zip(z).map(|(a, z)| a * z).sum::<f64>() + c)
            .collect()
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                found: z.len(),
            });
        }
        Ok(match self {
            GeneratorMap::Identity { .. } => z.to_vec(),
            GeneratorMap::Affine { matrix, bias } => Self::affine(matrix, bias, z),
            GeneratorMap::TanhAffine { matrix, bias } => Self::affine(matrix, bias, z)
                .into_iter()
                .map(f64::tanh)
                .collect(),
        })
    }

    /// `J(z)^T v`, the gradient pullback used by latent inversion.
    fn pullback(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let transpose = |matrix: &[Vec<f64>], w: &[f64]| -> Vec<f64> {
            (0..matrix[0].len())
                .map(|j| matrix.iter().zip(w).map(|(row, w)| row[j] * w).sum())
                .collect()
        };
        match self {
            GeneratorMap::Identity { .. } => v.to_vec(),
            GeneratorMap::Affine { matrix, .. } => transpose(matrix, v),
            GeneratorMap::TanhAffine { matrix, bias } => {
                let scaled: Vec<f64> = Self::affine(matrix, bias, z)
                    .iter()
                    .zip(v)
                    .map(|(a, v)| (1.0 - a.tanh().powi(2)) * v)
                    .collect();
                transpose(matrix, &scaled)
            }
        }
    }
}

/// Result of [`invert_generator`].
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub latent: Vec<f64>,
    /// Final squared reconstruction error `||g(z) - x||^2`.
    pub error: f64,
}

/// Finds a latent code for `x` by gradient descent on `1/2 ||g(z) - x||^2`
/// from `z = 0` with a fixed step.
pub fn invert_generator(
    g: &GeneratorMap,
    x: &Point,
    steps: usize,
    step_size: f64,
) -> Result<Inversion> {
    if x.dim() != g.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.output_dim(),
            found: x.dim(),
        });
    }
    let target = x.coords();
    let mut z = vec![0.0; g.latent_dim()];
    let residual = |z: &[f64]| -> Result<Vec<f64>> {
        Ok(g.apply(z)?.iter().zip(target).map(|(a, b)| a - b).collect())
    };
    for _ in 0..steps {
        let r = residual(&z)?;
        let loss: f64 = r.iter().map(|v| v * v).sum();
        if !loss.is_finite() {
            return Err(Error::NonFinite("latent inversion loss".into()));
        }
        let grad = g.pullback(&z, &r);
        for (z, g) in z.iter_mut().zip(&grad) {
            *z -= step_size * g;
        }
    }
    let error: f64 = residual(&z)?.iter().map(|v| v * v).sum();
    if !error.is_finite() {
        return Err(Error::NonFinite("latent inversion loss".into()));
    }
    Ok(Inversion { latent: z, error })
}

/// A sampleable conditional distribution `q(x | y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProposalKernel {
    RandomWalk {
        stddev: f64,
    },
    Independent {
        density: DensitySpec,
    },
    LatentSpherical {
        angle: f64,
        generator: GeneratorMap,
    },
    /// `matrix[x][y]` is the probability of proposing state `x` from state `y`;
    /// every column sums to one.
    FiniteMatrix {
        matrix: Vec<Vec<f64>>,
    },
}

/// A proposed point, with its latent code for latent-spherical kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub point: Point,
    pub latent: Option<Vec<f64>>,
}

impl ProposalKernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProposalKernel::RandomWalk { stddev } => {
                if !(stddev.is_finite() && *stddev > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "random-walk stddev must be > 0, got {stddev}"
                    )));
                }
            }
            ProposalKernel::Independent { density } => density.validate()?,
            ProposalKernel::LatentSpherical { angle, generator } => {
                if !(0.0..=FRAC_PI_2).contains(angle) {
                    return Err(Error::InvalidSpec(format!(
                        "latent angle must lie in [0, pi/2], got {angle}"
                    )));
                }
                generator.validate()?;
            }
            ProposalKernel::FiniteMatrix { matrix } => validate_column_stochastic(matrix)?,
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, ProposalKernel::RandomWalk { .. })
    }

    pub fn is_independent(&self) -> bool {
        matches!(self, ProposalKernel::Independent { .. })
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, ProposalKernel::LatentSpherical { .. })
    }

    /// The finite-matrix kernel parsed from header-free CSV, `K` rows by `K` columns.
    pub fn finite_from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut matrix = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidSpec(format!("bad matrix entry {field:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            matrix.push(row);
        }
        let kernel = ProposalKernel::FiniteMatrix { matrix };
        kernel.validate()?;
        Ok(kernel)
    }

    /// Draws `x ~ q(. | y)`. The latent-spherical kernel needs `latent`, the
    /// code of `y`, and returns the code of `x` alongside it.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        y: &Point,
        latent: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<Proposal> {
        match self {
            ProposalKernel::RandomWalk { stddev } => {
                let coords = y
                    .coords()
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(rng);
                        c + stddev * z
                    })
                    .collect();
                Ok(Proposal {
                    point: Point::new(coords)?,
                    latent: None,
                })
            }
            ProposalKernel::Independent { density } => Ok(Proposal {
                point: density.sample_one(rng),
                latent: None,
            }),
            ProposalKernel::LatentSpherical { angle, generator } => {
                let zy = latent.ok_or(Error::MissingLatent)?;
                if zy.len() != generator.latent_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: generator.latent_dim(),
                        found: zy.len(),
                    });
                }
                let (s, c) = angle.sin_cos();
                let zx: Vec<f64> = zy
                    .iter()
                    .map(|z| {
                        let v: f64 = StandardNormal.sample(rng);
                        c * z + s * v
                    })
                    .collect();
                let point = Point::new(generator.apply(&zx)?)?;
                Ok(Proposal {
                    point,
                    latent: Some(zx),
                })
            }
            ProposalKernel::FiniteMatrix { matrix } => {
                let k = matrix.len();
                let from = y.as_state(k)?;
                let column: Vec<f64> = matrix.iter().map(|row| row[from]).collect();
                Ok(Proposal {
                    point: Point::state(inverse_cdf_index(&column, rng.random())),
                    latent: None,
                })
            }
        }
    }

    /// Exact `q(x | y)`.
    pub fn density(&self, x: &Point, y: &Point) -> Result<f64> {
        match self {
            ProposalKernel::RandomWalk { stddev } => {
                check_same_dim(x, y)?;
                Ok(x.coords()
                    .iter()
                    .zip(y.coords())
                    .map(|(a, b)| normal_pdf(*a, *b, *stddev))
                    .product())
            }
            ProposalKernel::Independent { density } => density.density(x),
            ProposalKernel::LatentSpherical { .. } => Err(Error::ImplicitKernel),
            ProposalKernel::FiniteMatrix { matrix } => {
                let k = matrix.len();
                Ok(matrix[x.as_state(k)?][y.as_state(k)?])
            }
        }
    }

    /// `ln q(x | y)`, finite wherever the density is positive.
    pub fn log_density(&self, x: &Point, y: &Point) -> Result<f64> {
        let value = match self {
            ProposalKernel::RandomWalk { stddev } => {
                check_same_dim(x, y)?;
                x.coords()
                    .iter()
                    .zip(y.coords())
                    .map(|(a, b)| normal_ln_pdf(*a, *b, *stddev))
                    .sum()
            }
            ProposalKernel::Independent { density } => return density.log_density(x),
            ProposalKernel::LatentSpherical { .. } => return Err(Error::ImplicitKernel),
            ProposalKernel::FiniteMatrix { .. } => self.density(x, y)?.ln(),
        };
        if value == f64::NEG_INFINITY {
            return Err(Error::ZeroDensity);
        }
        Ok(value)
    }

    /// Number of states of a finite-matrix kernel.
    pub fn states(&self) -> Option<usize> {
        match self {
            ProposalKernel::FiniteMatrix { matrix } => Some(matrix.len()),
            _ => None,
        }
    }
}

fn check_same_dim(x: &Point, y: &Point) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: y.dim(),
            found: x.dim(),
        });
    }
    Ok(())
}

/// Square, strictly positive, every column summing to one within `1e-12`.
pub fn validate_column_stochastic(matrix: &[Vec<f64>]) -> Result<()> {
    let k = matrix.len();
    if k == 0 {
        return Err(Error::InvalidSpec("finite matrix is empty".into()));
    }
    if let Some(row) = matrix.iter().find(|r| r.len() != k) {
        return Err(Error::LengthMismatch(row.len(), k));
    }
    if matrix.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidSpec(
            "finite matrix entries must be strictly positive".into(),
        ));
    }
    for y in 0..k {
        let total: f64 = matrix.iter().map(|row| row[y]).sum();
        if (total - 1.0).abs() > COLUMN_TOL {
            return Err(Error::InvalidSpec(format!(
                "column {y} sums to {total}, expected 1"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::f64::consts::PI;

    fn spherical(angle: f64) -> ProposalKernel {
        ProposalKernel::LatentSpherical {
            angle,
            generator: GeneratorMap::Identity { dim: 3 },
        }
    }

    #[test]
    fn zero_angle_keeps_latent() {
        let zy = [0.3, -1.2, 2.0];
        let y = Point::new(zy.to_vec()).unwrap();
        let out = spherical(0.0).propose(&y, Some(&zy), &mut seeded(1)).unwrap();
        assert_eq!(out.latent.as_deref(), Some(&zy[..]));
        assert_eq!(out.point.coords(), &zy);
    }

    #[test]
    fn right_angle_forgets_latent() {
        let zy = [0.3, -1.2, 2.0];
        let y = Point::new(zy.to_vec()).unwrap();
        let a = spherical(FRAC_PI_2)
            .propose(&y, Some(&zy), &mut seeded(5))
            .unwrap();
        let other = [9.0, 9.0, 9.0];
        let b = spherical(FRAC_PI_2)
            .propose(&y, Some(&other), &mut seeded(5))
            .unwrap();
        // cos(pi/2) is 6e-17, not 0
        for (u, v) in a.latent.unwrap().iter().zip(b.latent.unwrap()) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_latent_is_an_error() {
        let y = Point::scalar(0.0);
        let k = ProposalKernel::LatentSpherical {
            angle: PI / 3.0,
            generator: GeneratorMap::Identity { dim: 1 },
        };
        assert!(matches!(
            k.propose(&y, None, &mut seeded(0)),
            Err(Error::MissingLatent)
        ));
        assert!(matches!(
            k.density(&y, &y),
            Err(Error::ImplicitKernel)
        ));
    }

    #[test]
    fn random_walk_density() {
        let k = ProposalKernel::RandomWalk { stddev: 1.0 };
        let y = Point::scalar(0.7);
        assert!((k.density(&y, &y).unwrap() - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-16);
        let x = Point::scalar(-1.9);
        assert_eq!(k.density(&x, &y).unwrap(), k.density(&y, &x).unwrap());
    }

    #[test]
    fn independent_density_ignores_condition() {
        let k = ProposalKernel::Independent {
            density: DensitySpec::gaussian(0.0, 2.0).unwrap(),
        };
        let x = Point::scalar(1.3);
        let a = k.density(&x, &Point::scalar(-5.0)).unwrap();
        let b = k.density(&x, &Point::scalar(8.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn finite_matrix_validation_and_csv() {
        let k = ProposalKernel::finite_from_csv("0.5, 0.25\n0.5, 0.75\n").unwrap();
        assert_eq!(k.states(), Some(2));
        assert_eq!(
            k.density(&Point::state(1), &Point::state(0)).unwrap(),
            0.5
        );
        assert!(ProposalKernel::finite_from_csv("0.5,0.5\n0.6,0.5\n").is_err());
        assert!(ProposalKernel::finite_from_csv("1.0,0.5\n0.0,0.5\n").is_err());
        assert!(ProposalKernel::finite_from_csv("1.0,0.5\n").is_err());
    }

    #[test]
    fn identity_inversion_one_step() {
        let g = GeneratorMap::Identity { dim: 2 };
        let x = Point::new(vec![0.4, -3.0]).unwrap();
        let inv = invert_generator(&g, &x, 1, 1.0).unwrap();
        assert_eq!(inv.latent, vec![0.4, -3.0]);
        assert_eq!(inv.error, 0.0);
    }

    #[test]
    fn inversion_diverging_is_an_error() {
        let g = GeneratorMap::Affine {
            matrix: vec![vec![10.0]],
            bias: vec![0.0],
        };
        let x = Point::scalar(1.0);
        assert!(matches!(
            invert_generator(&g, &x, 2000, 1.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn angle_out_of_range_rejected() {
        assert!(spherical(2.0).validate().is_err());
        assert!(spherical(PI / 3.0).validate().is_ok());
    }
}
