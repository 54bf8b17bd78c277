//! Density-ratio losses, their gradients, and ratio extraction.
//!
//! Every loss is a weighted mean over ordered pairs `(x, y)` with `x` from
//! the target and `y` from the proposal (conditioned on `x` for Markov
//! kernels). Per pair, with `r = d(y, x) / d(x, y)`:
//!
//! | kind | per-pair loss | extracted ratio |
//! |------|---------------|-----------------|
//! | UB   | `ln r + r` | `d(x,y) / d(y,x)` |
//! | MCE  | `-ln d(x,y) - ln(1 - d(y,x))` | `d(x,y) / d(y,x)` |
//! | LT   | `r` | `(d(x,y) / d(y,x))^2` |
//! | CCE  | `-ln d(x) - ln(1 - d(y))` | `d(x)(1-d(y)) / (d(y)(1-d(x)))` |

use serde::{Deserialize, Serialize};

use crate::discriminator::{
    adam_step, AdamConfig, AdamState, Architecture, Discriminator, HeadKind, PairForward, PairPartials,
};
use crate::distributions::Point;
use crate::error::{Error, Result};

/// Denominator floor for ratios of an unclamped (`b = 0`) discriminator.
pub const RATIO_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    UB,
    MCE,
    CCE,
    LT,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::UB, LossKind::MCE, LossKind::CCE, LossKind::LT];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::UB => "UB",
            LossKind::MCE => "MCE",
            LossKind::CCE => "CCE",
            LossKind::LT => "LT",
        }
    }

    pub fn check_head(self, head: HeadKind) -> Result<()> {
        let ok = match self {
            LossKind::CCE => head == HeadKind::FactorizedIndependent,
            _ => matches!(head, HeadKind::PairwiseLogitDiff | HeadKind::Tabular),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Incompatible(format!(
                "{} loss cannot train a {head:?} head",
                self.name()
            )))
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidSpec(format!("unknown loss {s:?}")))
    }
}

/// Ordered pairs `(x, y)` with optional weights.
///
/// Without weights the loss is the plain mean. Weights make the batch an
/// exact expectation over an enumerated finite space; they must be
/// nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<(Point, Point)>,
    pub weights: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl PairBatch {
    pub fn new(pairs: Vec<(Point, Point)>) -> Self {
        PairBatch {
            pairs,
            weights: None,
            seed: None,
        }
    }

    /// All `K^2` pairs weighted by `p(x) q(y | x)`, with `q[y][x] = q(y | x)`.
    pub fn exact_markov(p: &[f64], q: &[Vec<f64>]) -> Self {
        let k = p.len();
        let mut pairs = Vec::with_capacity(k * k);
        let mut weights = Vec::with_capacity(k * k);
        for x in 0..k {
            for y in 0..k {
                pairs.push((Point::state(x), Point::state(y)));
                weights.push(p[x] * q[y][x]);
            }
        }
        PairBatch {
            pairs,
            weights: Some(weights),
            seed: None,
        }
    }

    /// All `K^2` pairs weighted by `p(x) q(y)`.
    pub fn exact_independent(p: &[f64], q: &[f64]) -> Self {
        let k = p.len();
        let mut pairs = Vec::with_capacity(k * k);
        let mut weights = Vec::with_capacity(k * k);
        for x in 0..k {
            for y in 0..k {
                pairs.push((Point::state(x), Point::state(y)));
                weights.push(p[x] * q[y]);
            }
        }
        PairBatch {
            pairs,
            weights: Some(weights),
            seed: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::InvalidSpec("empty pair batch".into()));
        }
        for (x, y) in &self.pairs {
            if x.dim() != y.dim() {
                return Err(Error::DimensionMismatch {
                    expected: x.dim(),
                    found: y.dim(),
                });
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.pairs.len() {
                return Err(Error::LengthMismatch(w.len(), self.pairs.len()));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidSpec("pair weights must be >= 0".into()));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidSpec(format!(
                    "pair weights sum to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }

    fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.pairs.len() as f64,
        }
    }
}

/// Mean loss, its two additive terms, and the parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// UB: (log, ratio); MCE: (-ln d(x,y), -ln(1-d(y,x))); CCE: (-ln d(x), -ln(1-d(y)));
    /// LT: (ratio, 0).
    pub terms: [f64; 2],
    pub grads: Vec<f64>,
    /// Pairs whose ratio denominator hit [`RATIO_GUARD`].
    pub guard_hits: usize,
}

fn checked_ln(v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v.ln())
    } else {
        Err(Error::LogOfNonPositive(v))
    }
}

/// `d`, floored at [`RATIO_GUARD`] for unclamped discriminators.
fn guarded(d: f64, floor: f64, hits: &mut usize) -> f64 {
    if floor == 0.0 && d < RATIO_GUARD {
        *hits += 1;
        RATIO_GUARD
    } else {
        d
    }
}

struct PairLoss {
    terms: [f64; 2],
    partials: PairPartials,
}

fn pair_loss(kind: LossKind, f: &PairForward, floor: f64, hits: &mut usize) -> Result<PairLoss> {
    let (dxy, dyx) = (f.d_xy, f.d_yx);
    Ok(match kind {
        LossKind::UB => {
            let den = guarded(dxy, floor, hits);
            let r = dyx / den;
            PairLoss {
                terms: [checked_ln(dyx)? - checked_ln(den)?, r],
                partials: PairPartials {
                    d_xy: -1.0 / den - dyx / (den * den),
                    d_yx: 1.0 / dyx + 1.0 / den,
                    ..Default::default()
                },
            }
        }
        LossKind::MCE => PairLoss {
            terms: [-checked_ln(dxy)?, -checked_ln(1.0 - dyx)?],
            partials: PairPartials {
                d_xy: -1.0 / dxy,
                d_yx: 1.0 / (1.0 - dyx),
                ..Default::default()
            },
        },
        LossKind::LT => {
            let den = guarded(dxy, floor, hits);
            PairLoss {
                terms: [dyx / den, 0.0],
                partials: PairPartials {
                    d_xy: -dyx / (den * den),
                    d_yx: 1.0 / den,
                    ..Default::default()
                },
            }
        }
        LossKind::CCE => {
            let (dx, dy) = match (f.d_x, f.d_y) {
                (Some(dx), Some(dy)) => (dx, dy),
                _ => {
                    return Err(Error::Incompatible(
                        "CCE needs per-point discriminator values".into(),
                    ))
                }
            };
            PairLoss {
                terms: [-checked_ln(dx)?, -checked_ln(1.0 - dy)?],
                partials: PairPartials {
                    d_x: -1.0 / dx,
                    d_y: 1.0 / (1.0 - dy),
                    ..Default::default()
                },
            }
        }
    })
}

/// Mean loss over `batch` with exact gradients w.r.t. every parameter of `disc`.
pub fn loss_eval(kind: LossKind, disc: &Discriminator, batch: &PairBatch) -> Result<LossEval> {
    kind.check_head(disc.head)?;
    batch.validate()?;
    let mut grads = vec![0.0; disc.net.param_count()];
    let mut terms = [0.0; 2];
    let mut hits = 0;
    for (i, (x, y)) in batch.pairs.iter().enumerate() {
        let w = batch.weight(i);
        if w == 0.0 {
            continue;
        }
        let fwd = disc.pair_forward(x, y)?;
        let pl = pair_loss(kind, &fwd, disc.floor, &mut hits)?;
        terms[0] += w * pl.terms[0];
        terms[1] += w * pl.terms[1];
        let g = pl.partials;
        let scaled = PairPartials {
            d_xy: w * g.d_xy,
            d_yx: w * g.d_yx,
            d_x: w * g.d_x,
            d_y: w * g.d_y,
        };
        disc.pair_backward(&fwd, scaled, &mut grads);
    }
    let value = terms[0] + terms[1];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{} loss", kind.name())));
    }
    Ok(LossEval {
        value,
        terms,
        grads,
        guard_hits: hits,
    })
}

/// One side-by-side comparison of a pointwise inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        InequalityCheck {
            lhs,
            rhs,
            holds: lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityReport {
    /// `ln(d_yx/d_xy) + d_yx/d_xy <= -ln d_xy - ln(1 - d_yx) + 1/b`.
    pub markov: InequalityCheck,
    /// The same UB term with `d(x,y) = d_x (1 - d_y)`, against
    /// `-ln d_x - ln(1 - d_y) + 1/b`.
    pub independent: InequalityCheck,
}

/// Per-sample cross-entropy upper bounds on the UB integrand.
///
/// The Markov check expects `d_xy, d_yx` in `[b, 1]`; the independent check
/// expects factors `d_x, d_y` in `(0, 1)` whose pair ratio lies in `[b, 1/b]`.
/// Infinite right-hand sides count as holding.
pub fn pointwise_inequalities(d_xy: f64, d_yx: f64, d_x: f64, d_y: f64, b: f64) -> InequalityReport {
    let ub = |num: f64, den: f64| (num / den).ln() + num / den;
    let markov = InequalityCheck::new(ub(d_yx, d_xy), -d_xy.ln() - (1.0 - d_yx).ln() + 1.0 / b);
    let fxy = d_x * (1.0 - d_y);
    let fyx = d_y * (1.0 - d_x);
    let independent = InequalityCheck::new(ub(fyx, fxy), -d_x.ln() - (1.0 - d_y).ln() + 1.0 / b);
    InequalityReport {
        markov,
        independent,
    }
}

fn guarded_ratio(num: f64, den: f64, floor: f64) -> Result<f64> {
    if den <= 0.0 && floor > 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(num / den.max(if floor == 0.0 { RATIO_GUARD } else { 0.0 }))
}

/// Estimated `p(x) q(y|x) / (p(y) q(x|y))` under the rule of `kind`.
pub fn dre_extract(kind: LossKind, disc: &Discriminator, x: &Point, y: &Point) -> Result<f64> {
    kind.check_head(disc.head)?;
    let f = disc.pair_forward(x, y)?;
    match kind {
        LossKind::UB | LossKind::MCE => guarded_ratio(f.d_xy, f.d_yx, disc.floor),
        LossKind::LT => Ok(guarded_ratio(f.d_xy, f.d_yx, disc.floor)?.powi(2)),
        LossKind::CCE => {
            let (dx, dy) = (f.d_x.unwrap_or_default(), f.d_y.unwrap_or_default());
            guarded_ratio(dx * (1.0 - dy), dy * (1.0 - dx), disc.floor)
        }
    }
}

/// `dre_extract(x, reference)` for each `x`: with a symmetric proposal this
/// estimates the unnormalized target `p(x) / p(reference)`.
pub fn unnormalized_density_probe(
    kind: LossKind,
    disc: &Discriminator,
    reference: &Point,
    xs: &[Point],
) -> Result<Vec<f64>> {
    xs.iter()
        .map(|x| dre_extract(kind, disc, x, reference))
        .collect()
}

/// Full-batch Adam with a learning rate decaying geometrically from
/// `adam.learning_rate` to `adam.learning_rate * final_lr_fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub final_lr_fraction: f64,
}

/// Minimizes `kind` over a fixed batch; returns the final loss.
pub fn fit_full_batch(
    kind: LossKind,
    disc: &mut Discriminator,
    batch: &PairBatch,
    config: &FitConfig,
) -> Result<LossEval> {
    let mut state = AdamState::new(config.adam, disc.net.param_count());
    let decay = config
        .final_lr_fraction
        .powf(1.0 / config.iterations.max(1) as f64);
    for _ in 0..config.iterations {
        let eval = loss_eval(kind, disc, batch)?;
        adam_step(disc.net.params_mut(), &eval.grads, &mut state)?;
        state.config.learning_rate *= decay;
    }
    loss_eval(kind, disc, batch)
}

/// Floor on the denominator of [`GradientCheck::max_rel_error`].
pub const GRADIENT_SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose perturbation moved some input across a rectifier kink.
    pub skipped: usize,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, GRADIENT_SCALE_FLOOR)`.
    pub max_rel_error: f64,
    pub worst: Option<usize>,
}

/// Compares analytic gradients of `kind` against central differences with
/// step `h` at each parameter index in `coords`.
pub fn gradient_check(
    kind: LossKind,
    disc: &Discriminator,
    batch: &PairBatch,
    coords: &[usize],
    h: f64,
) -> Result<GradientCheck> {
    let analytic = loss_eval(kind, disc, batch)?.grads;
    let points: Vec<&Point> = match disc.net.architecture() {
        Architecture::Mlp { .. } => batch.pairs.iter().flat_map(|(x, y)| [x, y]).collect(),
        _ => Vec::new(),
    };
    let pattern = |d: &Discriminator| -> Result<Vec<Vec<bool>>> {
        points.iter().map(|x| d.net.activation_pattern(x)).collect()
    };
    let base = pattern(disc)?;
    let mut check = GradientCheck {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = disc.clone();
    for &i in coords {
        if i >= analytic.len() {
            return Err(Error::LengthMismatch(i, analytic.len()));
        }
        let theta = disc.net.params()[i];
        probe.net.params_mut()[i] = theta + h;
        let up_pattern = pattern(&probe)?;
        let up = loss_eval(kind, &probe, batch)?.value;
        probe.net.params_mut()[i] = theta - h;
        let down_pattern = pattern(&probe)?;
        let down = loss_eval(kind, &probe, batch)?.value;
        probe.net.params_mut()[i] = theta;
        if up_pattern != base || down_pattern != base {
            check.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(GRADIENT_SCALE_FLOOR);
        let rel = (analytic[i] - numeric).abs() / scale;
        check.checked += 1;
        if rel > check.max_rel_error || check.worst.is_none() {
            check.max_rel_error = check.max_rel_error.max(rel);
            check.worst = Some(i);
        }
    }
    Ok(check)
}
