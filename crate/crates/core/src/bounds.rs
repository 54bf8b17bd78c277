//! Total-variation distances, finite-state kernels and the bound chain
//! relating the stationary error of implicit MH to the discriminator loss.
//!
//! Finite tables follow the proposal orientation: `t[x][y]` is the
//! probability of moving to `x` from `y`, so columns sum to one.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::distributions::{DensitySpec, Point};
use crate::error::{Error, Result};
use crate::proposals::{validate_column_stochastic, ProposalKernel};
use crate::rng::seeded;

/// Slack allowed on every checked inequality.
pub const INEQUALITY_SLACK: f64 = 1e-12;

/// Column-stochastic `K x K` table.
pub type Table = Vec<Vec<f64>>;

fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + INEQUALITY_SLACK * rhs.abs().max(1.0)
}

/// `1/2 sum |a_i - c_i|`; `c` need not be normalized.
pub fn tv_discrete(a: &[f64], c: &[f64]) -> Result<f64> {
    if a.len() != c.len() {
        return Err(Error::LengthMismatch(a.len(), c.len()));
    }
    Ok(0.5 * a.iter().zip(c).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Composite Simpson rule on `[-L, L]` with `N` (odd) nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub half_width: f64,
    pub nodes: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid {
            half_width: 10.0,
            nodes: 4001,
        }
    }
}

impl QuadratureGrid {
    pub fn new(half_width: f64, nodes: usize) -> Result<Self> {
        let grid = QuadratureGrid { half_width, nodes };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(Error::InvalidSpec("quadrature window must be > 0".into()));
        }
        if self.nodes < 3 || self.nodes.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "quadrature needs an odd node count >= 3, got {}",
                self.nodes
            )));
        }
        Ok(())
    }

    /// The same window with the step halved.
    pub fn refined(&self) -> Self {
        QuadratureGrid {
            half_width: self.half_width,
            nodes: 2 * self.nodes - 1,
        }
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.step()
    }

    /// Composite Simpson weights, step size included.
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.step();
        if i == 0 || i + 1 == self.nodes {
            h / 3.0
        } else if i % 2 == 1 {
            4.0 * h / 3.0
        } else {
            2.0 * h / 3.0
        }
    }

    /// `∫ f` over the window.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        (0..self.nodes).map(|i| self.weight(i) * f(self.node(i))).sum()
    }

    /// `∫ |f|` over the window. Panels where `f` changes sign are split at
    /// each root so the kink of `|f|` does not cost accuracy.
    pub fn integrate_abs(&self, f: impl Fn(f64) -> f64) -> f64 {
        let h = self.step();
        let values: Vec<f64> = (0..self.nodes).map(|i| f(self.node(i))).collect();
        let mut total = 0.0;
        for panel in 0..(self.nodes - 1) / 2 {
            let i = 2 * panel;
            let (a, m, b) = (values[i], values[i + 1], values[i + 2]);
            let x0 = self.node(i);
            if (a >= 0.0 && m >= 0.0 && b >= 0.0) || (a <= 0.0 && m <= 0.0 && b <= 0.0) {
                total += h / 3.0 * (a.abs() + 4.0 * m.abs() + b.abs());
                continue;
            }
            let mut cuts = vec![x0];
            for (lo, hi, flo, fhi) in [(x0, x0 + h, a, m), (x0 + h, x0 + 2.0 * h, m, b)] {
                if flo * fhi < 0.0 {
                    cuts.push(bisect_root(&f, lo, hi, flo));
                }
                cuts.push(hi);
            }
            for w in cuts.windows(2) {
                let (l, r) = (w[0], w[1]);
                if r > l {
                    let mid = 0.5 * (l + r);
                    total += (r - l) / 6.0 * (f(l).abs() + 4.0 * f(mid).abs() + f(r).abs());
                }
            }
        }
        total
    }
}

fn bisect_root(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, flo: f64) -> f64 {
    let positive = flo > 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuousTv {
    pub tv: f64,
    /// Mass of `p` outside the window.
    pub truncated_mass: f64,
    /// Mass of the comparison density outside the window, when known.
    pub comparison_truncated_mass: Option<f64>,
    /// Change of the estimate when the step is halved.
    pub refinement_change: f64,
}

/// Largest change under step halving still accepted as converged.
pub const REFINEMENT_TOL: f64 = 1e-6;

/// `1/2 ∫ |p - q|` over the grid window for an arbitrary comparison density.
pub fn tv_continuous_fn(
    p: &DensitySpec,
    q: impl Fn(f64) -> f64,
    grid: &QuadratureGrid,
) -> Result<ContinuousTv> {
    grid.validate()?;
    if p.is_finite_state() {
        return Err(Error::Incompatible(
            "continuous TV needs a continuous density".into(),
        ));
    }
    let diff = |x: f64| p.density(&Point::scalar(x)).unwrap_or(0.0) - q(x);
    let coarse = 0.5 * grid.integrate_abs(diff);
    let fine = 0.5 * grid.refined().integrate_abs(diff);
    let change = (fine - coarse).abs();
    if change > REFINEMENT_TOL {
        return Err(Error::GridTooCoarse { change });
    }
    let l = grid.half_width;
    Ok(ContinuousTv {
        tv: coarse,
        truncated_mass: p.cdf(-l)? + (1.0 - p.cdf(l)?),
        comparison_truncated_mass: None,
        refinement_change: change,
    })
}

/// `1/2 ∫ |p - q|` over the grid window.
pub fn tv_continuous(p: &DensitySpec, q: &DensitySpec, grid: &QuadratureGrid) -> Result<ContinuousTv> {
    if q.is_finite_state() {
        return Err(Error::Incompatible(
            "continuous TV needs a continuous density".into(),
        ));
    }
    let mut report = tv_continuous_fn(p, |x| q.density(&Point::scalar(x)).unwrap_or(0.0), grid)?;
    let l = grid.half_width;
    report.comparison_truncated_mass = Some(q.cdf(-l)? + (1.0 - q.cdf(l)?));
    Ok(report)
}

/// Exactly solvable implicit-MH instance on `K` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteInstance {
    pub p: Vec<f64>,
    /// `q[x][y]`: probability of proposing `x` from `y`.
    pub q: Table,
    /// `d[x][y]`: discriminator value of the ordered pair, within `[b, 1]`.
    pub d: Table,
    pub b: f64,
}

impl FiniteInstance {
    pub fn states(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.p.len();
        if k == 0 {
            return Err(Error::InvalidSpec("instance has no states".into()));
        }
        if self.p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidSpec("target entries must be > 0".into()));
        }
        let total: f64 = self.p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("target sums to {total}")));
        }
        if self.q.len() != k {
            return Err(Error::LengthMismatch(self.q.len(), k));
        }
        validate_column_stochastic(&self.q)?;
        if !(self.b > 0.0 && self.b <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "discriminator floor must lie in (0, 1], got {}",
                self.b
            )));
        }
        if self.d.len() != k || self.d.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidSpec("discriminator table must be K x K".into()));
        }
        for (x, row) in self.d.iter().enumerate() {
            for (y, v) in row.iter().enumerate() {
                if !(*v >= self.b && *v <= 1.0) {
                    return Err(Error::InvalidSpec(format!(
                        "d[{x}][{y}] = {v} lies outside [{}, 1]",
                        self.b
                    )));
                }
            }
        }
        Ok(())
    }

    /// `A[x][y] = p(x) q(y|x)`, the law of a pair `x ~ p`, `y ~ q(.|x)`.
    pub fn forward_joint(&self) -> Table {
        let k = self.states();
        (0..k)
            .map(|x| (0..k).map(|y| self.p[x] * self.q[y][x]).collect())
            .collect()
    }

    /// `B[x][y] = q(x|y) p(y) d(x,y) / d(y,x)`.
    pub fn reweighted_reverse_joint(&self) -> Table {
        let k = self.states();
        (0..k)
            .map(|x| {
                (0..k)
                    .map(|y| self.q[x][y] * self.p[y] * self.d[x][y] / self.d[y][x])
                    .collect()
            })
            .collect()
    }

    /// Expectation of the UB integrand `ln r + r`, `r = d(y,x)/d(x,y)`, under `A`.
    pub fn ub_loss(&self) -> f64 {
        let a = self.forward_joint();
        let k = self.states();
        let mut total = 0.0;
        for x in 0..k {
            for y in 0..k {
                let r = self.d[y][x] / self.d[x][y];
                total += a[x][y] * (r.ln() + r);
            }
        }
        total
    }

    /// `KL(p(x) q(y|x) ‖ p(y) q(x|y))` over ordered pairs.
    pub fn pair_kl(&self) -> f64 {
        let a = self.forward_joint();
        let k = self.states();
        let mut total = 0.0;
        for x in 0..k {
            for y in 0..k {
                total += a[x][y] * (a[x][y] / a[y][x]).ln();
            }
        }
        total
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|e| format!("<unserializable: {e}>"))
    }
}

fn check_square(t: &[Vec<f64>]) -> Result<usize> {
    let k = t.len();
    if k == 0 {
        return Err(Error::InvalidSpec("empty table".into()));
    }
    if let Some(row) = t.iter().find(|row| row.len() != k) {
        return Err(Error::LengthMismatch(row.len(), k));
    }
    Ok(k)
}

/// Implicit-MH transition matrix: off-diagonal moves are proposed by `q`
/// and accepted with `min{1, d(x,y)/d(y,x)}`; rejected mass stays put.
pub fn assemble_kernel(inst: &FiniteInstance) -> Table {
    let k = inst.states();
    let mut t = vec![vec![0.0; k]; k];
    for y in 0..k {
        let mut stay = inst.q[y][y];
        for x in 0..k {
            if x == y {
                continue;
            }
            let accept = (inst.d[x][y] / inst.d[y][x]).min(1.0);
            t[x][y] = inst.q[x][y] * accept;
            stay += inst.q[x][y] - t[x][y];
        }
        t[y][y] = stay;
    }
    t
}

/// `t v` for a column-stochastic `t`.
pub fn apply_kernel(t: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    t.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub const STATIONARY_RESIDUAL: f64 = 1e-13;
pub const STATIONARY_MAX_ITERATIONS: usize = 1_000_000;

/// Fixed point of `t` by power iteration from the uniform vector, to a
/// max-norm residual of [`STATIONARY_RESIDUAL`].
pub fn stationary_of_kernel(t: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = check_square(t)?;
    let mut v = vec![1.0 / k as f64; k];
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITERATIONS {
        let mut next = apply_kernel(t, &v);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual < STATIONARY_RESIDUAL {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        iterations: STATIONARY_MAX_ITERATIONS,
        residual,
    })
}

/// Maximal minorization pair: `m_x = min_y table[x][y]`, `ε = Σ m`, `ν = m / ε`.
pub fn minorization_eps(table: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    check_square(table)?;
    let m: Vec<f64> = table
        .iter()
        .map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    if m.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::MinorizationFailure);
    }
    let eps: f64 = m.iter().sum();
    Ok((eps, m.iter().map(|v| v / eps).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub eps: f64,
    /// `‖t_{n+1} - t_n‖_TV` for `n = 0..steps`.
    pub step_tvs: Vec<f64>,
    /// Consecutive ratios; zero when the earlier distance is zero.
    pub ratios: Vec<f64>,
    /// Indices `n` with `‖t_{n+2} - t_{n+1}‖ > (1 - ε) ‖t_{n+1} - t_n‖ + slack`.
    pub violations: Vec<usize>,
}

/// Iterates `t_{n+1} = t t_n` and checks each step distance shrinks by `1 - ε`.
pub fn geometric_decay_check(t: &[Vec<f64>], t0: &[f64], steps: usize) -> Result<DecayReport> {
    let k = check_square(t)?;
    if t0.len() != k {
        return Err(Error::LengthMismatch(t0.len(), k));
    }
    let (eps, _) = minorization_eps(t)?;
    let mut prev = t0.to_vec();
    let mut step_tvs = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        let next = apply_kernel(t, &prev);
        step_tvs.push(tv_discrete(&next, &prev)?);
        prev = next;
    }
    let mut ratios = Vec::with_capacity(steps);
    let mut violations = Vec::new();
    for (n, w) in step_tvs.windows(2).enumerate() {
        ratios.push(if w[0] > 0.0 { w[1] / w[0] } else { 0.0 });
        if w[1] > (1.0 - eps) * w[0] + INEQUALITY_SLACK {
            violations.push(n);
        }
    }
    Ok(DecayReport {
        eps,
        step_tvs,
        ratios,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneStepBound {
    /// `‖t_1 - p‖_TV` with `t_0 = p`.
    pub lhs: f64,
    /// `2 TV(p(x) q(y|x), q(x|y) p(y) d(x,y)/d(y,x))`.
    pub rhs: f64,
    pub holds: bool,
}

pub fn one_step_bound_check(inst: &FiniteInstance) -> Result<OneStepBound> {
    inst.validate()?;
    let t = assemble_kernel(inst);
    let t1 = apply_kernel(&t, &inst.p);
    let lhs = tv_discrete(&t1, &inst.p)?;
    let rhs = 2.0 * joint_tv(inst);
    Ok(OneStepBound {
        lhs,
        rhs,
        holds: within(lhs, rhs),
    })
}

fn joint_tv(inst: &FiniteInstance) -> f64 {
    let a = inst.forward_joint();
    let b = inst.reweighted_reverse_joint();
    0.5 * a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinskerCheck {
    /// `TV(α, f)^2`.
    pub lhs: f64,
    /// `((2C + 1)/6)(KL̂(α ‖ f) + C - 1)`.
    pub rhs: f64,
    /// `C = Σ f`.
    pub mass: f64,
    /// `Σ α ln(α / f)`.
    pub kl_hat: f64,
    pub holds: bool,
}

/// Pinsker's inequality extended to an unnormalized positive second argument.
pub fn extended_pinsker(alpha: &[f64], f: &[f64]) -> Result<PinskerCheck> {
    if alpha.len() != f.len() {
        return Err(Error::LengthMismatch(alpha.len(), f.len()));
    }
    let mut kl_hat = 0.0;
    for (a, v) in alpha.iter().zip(f) {
        if *a > 0.0 {
            if !(*v > 0.0) {
                return Err(Error::InvalidSpec(
                    "f vanishes where alpha has mass".into(),
                ));
            }
            kl_hat += a * (a / v).ln();
        }
    }
    let mass: f64 = f.iter().sum();
    let tv = tv_discrete(alpha, f)?;
    let lhs = tv * tv;
    let rhs = (2.0 * mass + 1.0) / 6.0 * (kl_hat + mass - 1.0);
    Ok(PinskerCheck {
        lhs,
        rhs,
        mass,
        kl_hat,
        holds: within(lhs, rhs),
    })
}

/// Every quantity of the bound chain on one finite instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Minorization constant and distribution of the proposal table.
    pub eps: f64,
    pub nu: Vec<f64>,
    pub b: f64,
    /// `1/b`, the bound on the normalization `C`.
    pub c_bound: f64,
    /// `C = Σ q(x|y) p(y) d(x,y)/d(y,x)`.
    pub c_exact: f64,
    pub ub_loss: f64,
    pub kl: f64,
    /// `‖t∞ - p‖_TV`.
    pub tv_stationary: f64,
    /// `‖t_1 - p‖_TV`.
    pub tv_one_step: f64,
    /// `TV(p(x) q(y|x), q(x|y) p(y) d(x,y)/d(y,x))`.
    pub tv_joint: f64,
    /// The four members of the chain, each bounding the previous:
    /// `‖t∞-p‖²`, `‖t_1-p‖²/(bε)²`, `4 tv_joint²/(bε)²`,
    /// `(4+2b)/(3ε²b³) (UB - 1 + KL)`.
    pub chain: [f64; 4],
    /// The assembled bound on `‖t∞ - p‖²_TV`.
    pub bound: f64,
}

const LINK_NAMES: [&str; 3] = [
    "stationary distance <= telescoped one-step distance",
    "one-step distance <= joint-space distance",
    "joint-space distance <= extended Pinsker loss bound",
];

/// Computes and checks every link of the bound chain.
///
/// A violated link, or `C > 1/b`, is a [`Error::BoundViolation`] carrying
/// the instance as JSON.
pub fn final_bound(inst: &FiniteInstance) -> Result<BoundReport> {
    inst.validate()?;
    let (eps, nu) = minorization_eps(&inst.q)?;
    let b = inst.b;
    let t = assemble_kernel(inst);
    let stationary = stationary_of_kernel(&t)?;
    let tv_stationary = tv_discrete(&stationary, &inst.p)?;
    let t1 = apply_kernel(&t, &inst.p);
    let tv_one_step = tv_discrete(&t1, &inst.p)?;
    let tv_joint = joint_tv(inst);
    let c_exact: f64 = inst.reweighted_reverse_joint().iter().flatten().sum();
    let ub_loss = inst.ub_loss();
    let kl = inst.pair_kl();
    let be = b * eps;
    let chain = [
        tv_stationary * tv_stationary,
        tv_one_step * tv_one_step / (be * be),
        4.0 * tv_joint * tv_joint / (be * be),
        (4.0 + 2.0 * b) / (3.0 * eps * eps * b * b * b) * (ub_loss - 1.0 + kl),
    ];
    let violation = |link: &str| Error::BoundViolation {
        link: link.to_string(),
        instance: inst.to_json(),
    };
    for (i, name) in LINK_NAMES.iter().enumerate() {
        if !within(chain[i], chain[i + 1]) {
            return Err(violation(name));
        }
    }
    if !within(c_exact, 1.0 / b) {
        return Err(violation("normalization C <= 1/b"));
    }
    Ok(BoundReport {
        eps,
        nu,
        b,
        c_bound: 1.0 / b,
        c_exact,
        ub_loss,
        kl,
        tv_stationary,
        tv_one_step,
        tv_joint,
        chain,
        bound: chain[3],
    })
}

/// `w[x][y] = p(x) q(y|x)`.
fn pair_weights(p: &[f64], q: &[Vec<f64>]) -> Table {
    let k = p.len();
    (0..k)
        .map(|x| (0..k).map(|y| p[x] * q[y][x]).collect())
        .collect()
}

/// `R[x][y] = p(x) q(y|x) / (p(y) q(x|y))`.
pub fn exact_ratio_table(p: &[f64], q: &[Vec<f64>]) -> Table {
    let w = pair_weights(p, q);
    let k = p.len();
    (0..k)
        .map(|x| (0..k).map(|y| w[x][y] / w[y][x]).collect())
        .collect()
}

/// Discriminator table with `d(x,y)/d(y,x)` equal to the exact ratio:
/// `d(x,y) = w(x,y) / max(w(x,y), w(y,x))`. The floor `b` is the smallest entry.
pub fn exact_ratio_instance(p: Vec<f64>, q: Table) -> FiniteInstance {
    let w = pair_weights(&p, &q);
    let k = p.len();
    let d: Table = (0..k)
        .map(|x| (0..k).map(|y| w[x][y] / w[x][y].max(w[y][x])).collect())
        .collect();
    let b = d.iter().flatten().cloned().fold(1.0, f64::min);
    FiniteInstance { p, q, d, b }
}

/// Dirichlet(1, ..., 1) draw via normalized unit exponentials.
pub fn dirichlet_ones<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Smallest proposal entry before renormalization in random instances.
pub const PROPOSAL_FLOOR: f64 = 1e-3;

/// Random instance: Dirichlet(1) target, Dirichlet(1) proposal columns
/// floored at [`PROPOSAL_FLOOR`] and renormalized, `d` uniform in `[b, 1]`.
pub fn random_instance<R: Rng + ?Sized>(k: usize, b: f64, rng: &mut R) -> FiniteInstance {
    let p = loop {
        let p = dirichlet_ones(k, rng);
        if p.iter().all(|v| *v > 0.0) {
            break p;
        }
    };
    let mut q = vec![vec![0.0; k]; k];
    for y in 0..k {
        let col: Vec<f64> = dirichlet_ones(k, rng)
            .into_iter()
            .map(|v| v.max(PROPOSAL_FLOOR))
            .collect();
        let total: f64 = col.iter().sum();
        for x in 0..k {
            q[x][y] = col[x] / total;
        }
    }
    let d = (0..k)
        .map(|_| (0..k).map(|_| rng.random_range(b..=1.0)).collect())
        .collect();
    FiniteInstance { p, q, d, b }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestTvMethod {
    /// Nested composite Simpson over the grid window.
    Quadrature2d { grid: QuadratureGrid },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestTv {
    pub value: f64,
    /// Standard error of the Monte-Carlo estimate.
    pub std_error: Option<f64>,
}

/// `∫∫ |p(x) q(y|x) - p(y) q(x|y) dre(x,y)| dx dy`, the l1 error of a
/// density-ratio estimate weighted by `y ~ p`, `x ~ q(.|y)`. On a finite
/// space the double sum is exact and `method` is ignored.
pub fn test_tv_metric(
    p: &DensitySpec,
    kernel: &ProposalKernel,
    dre: &dyn Fn(&Point, &Point) -> Result<f64>,
    method: TestTvMethod,
) -> Result<TestTv> {
    if !kernel.has_density() {
        return Err(Error::Incompatible(
            "test-TV needs a density-evaluable proposal".into(),
        ));
    }
    p.validate()?;
    kernel.validate()?;
    if let DensitySpec::FiniteCategorical { probs } = p {
        return test_tv_finite(probs, kernel, dre);
    }
    match method {
        TestTvMethod::Quadrature2d { grid } => {
            grid.validate()?;
            let coarse = test_tv_quadrature(p, kernel, dre, &grid)?;
            let fine = test_tv_quadrature(p, kernel, dre, &grid.refined())?;
            let change = (fine - coarse).abs();
            if change > REFINEMENT_TOL {
                return Err(Error::GridTooCoarse { change });
            }
            Ok(TestTv {
                value: coarse,
                std_error: None,
            })
        }
        TestTvMethod::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::InvalidSpec("Monte-Carlo test-TV needs >= 2 samples".into()));
            }
            let mut rng = seeded(seed);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..samples {
                let y = p.sample_one(&mut rng);
                let x = kernel.propose(&y, None, &mut rng)?.point;
                let log_ratio = p.log_density(&x)? + kernel.log_density(&y, &x)?
                    - p.log_density(&y)?
                    - kernel.log_density(&x, &y)?;
                let err = (log_ratio.exp() - dre(&x, &y)?).abs();
                sum += err;
                sum_sq += err * err;
            }
            let n = samples as f64;
            let mean = sum / n;
            let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
            Ok(TestTv {
                value: mean,
                std_error: Some((var / n).sqrt()),
            })
        }
    }
}

fn test_tv_finite(
    probs: &[f64],
    kernel: &ProposalKernel,
    dre: &dyn Fn(&Point, &Point) -> Result<f64>,
) -> Result<TestTv> {
    let mut total = 0.0;
    for (x, px) in probs.iter().enumerate() {
        for (y, py) in probs.iter().enumerate() {
            let (xp, yp) = (Point::state(x), Point::state(y));
            total += (px * kernel.density(&yp, &xp)?
                - py * kernel.density(&xp, &yp)? * dre(&xp, &yp)?)
            .abs();
        }
    }
    Ok(TestTv {
        value: total,
        std_error: None,
    })
}

fn test_tv_quadrature(
    p: &DensitySpec,
    kernel: &ProposalKernel,
    dre: &dyn Fn(&Point, &Point) -> Result<f64>,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let density = |x: f64| p.density(&Point::scalar(x));
    let err = std::cell::RefCell::new(None);
    let mut total = 0.0;
    for j in 0..grid.nodes {
        let yv = grid.node(j);
        let y = Point::scalar(yv);
        let py = density(yv)?;
        let inner = grid.integrate_abs(|xv| {
            let x = Point::scalar(xv);
            let value = (|| -> Result<f64> {
                Ok(density(xv)? * kernel.density(&y, &x)?
                    - py * kernel.density(&x, &y)? * dre(&x, &y)?)
            })();
            value.unwrap_or_else(|e| {
                err.borrow_mut().get_or_insert(e);
                0.0
            })
        });
        if let Some(e) = err.borrow_mut().take() {
            return Err(e);
        }
        total += grid.weight(j) * inner;
    }
    Ok(total)
}

/// Bins of the histogram comparison.
pub const HISTOGRAM_BINS: usize = 200;

/// TV between the empirical histogram of `samples` and the binned analytic
/// density, over uniform bins on `[-L, L]` plus one cell for the outside.
pub fn histogram_tv(samples: &[f64], p: &DensitySpec, half_width: f64, bins: usize) -> Result<f64> {
    if samples.is_empty() || bins == 0 {
        return Err(Error::InvalidSpec("histogram needs samples and bins".into()));
    }
    let width = 2.0 * half_width / bins as f64;
    let mut counts = vec![0usize; bins + 1];
    for s in samples {
        let cell = if *s < -half_width || *s >= half_width {
            bins
        } else {
            (((s + half_width) / width) as usize).min(bins - 1)
        };
        counts[cell] += 1;
    }
    let n = samples.len() as f64;
    let mut masses = Vec::with_capacity(bins + 1);
    let mut inside = 0.0;
    for i in 0..bins {
        let lo = -half_width + i as f64 * width;
        let m = p.cdf(lo + width)? - p.cdf(lo)?;
        inside += m;
        masses.push(m);
    }
    masses.push((1.0 - inside).max(0.0));
    let empirical: Vec<f64> = counts.iter().map(|c| *c as f64 / n).collect();
    tv_discrete(&empirical, &masses)
}
