//! Randomized verification suites over exactly solvable finite instances.

use imh_core::bounds::{
    assemble_kernel, dirichlet_ones, exact_ratio_instance, extended_pinsker, final_bound,
    geometric_decay_check, one_step_bound_check, random_instance, stationary_of_kernel,
    tv_discrete, FiniteInstance, Table,
};
use imh_core::rng::{stream, ImhRng};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Floor used for the randomly drawn discriminator tables.
pub const SUITE_FLOOR: f64 = 0.1;
pub const DECAY_STEPS: usize = 50;
pub const STATIONARY_TOL: f64 = 1e-10;
pub const DETAILED_BALANCE_TOL: f64 = 1e-12;
pub const COLUMN_SUM_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Assembled kernels are column-stochastic with positive entries.
    Kernel,
    /// The exact-ratio discriminator leaves the target stationary.
    ExactRatio,
    /// Consecutive step distances shrink by at least `1 - ε`.
    Decay,
    /// One-step distance is bounded by the joint-space distance.
    OneStep,
    /// Pinsker's inequality with an unnormalized second argument.
    Pinsker,
    /// The full chain from stationary distance to discriminator loss.
    BoundChain,
    /// Rank-one kernels reach their fixed point in one step.
    RankOne,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Kernel,
        Suite::ExactRatio,
        Suite::Decay,
        Suite::OneStep,
        Suite::Pinsker,
        Suite::BoundChain,
        Suite::RankOne,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Kernel => "kernel",
            Suite::ExactRatio => "exact-ratio",
            Suite::Decay => "decay",
            Suite::OneStep => "one-step",
            Suite::Pinsker => "pinsker",
            Suite::BoundChain => "bound-chain",
            Suite::RankOne => "rank-one",
        }
    }

    fn index(self) -> u64 {
        Suite::ALL.iter().position(|s| *s == self).expect("listed") as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub suite: Suite,
    pub index: usize,
    pub message: String,
    /// The offending instance, replayable with `verify --replay`.
    pub instance: Option<FiniteInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: usize,
    pub passed: usize,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
    pub all_passed: bool,
}

fn instance_rng(seed: u64, suite: Suite, index: usize) -> ImhRng {
    stream(seed, (suite.index() << 32) | index as u64)
}

fn random_states(rng: &mut ImhRng) -> usize {
    rng.random_range(2..=6)
}

pub fn check_kernel(inst: &FiniteInstance) -> Result<(), String> {
    let t = assemble_kernel(inst);
    let k = inst.states();
    for y in 0..k {
        let sum: f64 = (0..k).map(|x| t[x][y]).sum();
        if (sum - 1.0).abs() > COLUMN_SUM_TOL {
            return Err(format!("column {y} sums to {sum}"));
        }
        for x in 0..k {
            if !(t[x][y] > 0.0) {
                return Err(format!("t[{x}][{y}] = {} is not positive", t[x][y]));
            }
        }
    }
    Ok(())
}

/// `max |p(y) t(x|y) - p(x) t(y|x)|`.
pub fn detailed_balance_gap(p: &[f64], t: &Table) -> f64 {
    let k = p.len();
    let mut gap: f64 = 0.0;
    for x in 0..k {
        for y in 0..k {
            gap = gap.max((p[y] * t[x][y] - p[x] * t[y][x]).abs());
        }
    }
    gap
}

pub fn check_exact_ratio(p: Vec<f64>, q: Table) -> Result<(), String> {
    let inst = exact_ratio_instance(p, q);
    let t = assemble_kernel(&inst);
    let v = stationary_of_kernel(&t).map_err(|e| e.to_string())?;
    let tv = tv_discrete(&v, &inst.p).map_err(|e| e.to_string())?;
    if tv > STATIONARY_TOL {
        return Err(format!("stationary distribution is {tv:e} from the target"));
    }
    let gap = detailed_balance_gap(&inst.p, &t);
    if gap > DETAILED_BALANCE_TOL {
        return Err(format!("detailed balance off by {gap:e}"));
    }
    Ok(())
}

fn check_decay(inst: &FiniteInstance, t0: &[f64]) -> Result<(), String> {
    let t = assemble_kernel(inst);
    let r = geometric_decay_check(&t, t0, DECAY_STEPS).map_err(|e| e.to_string())?;
    match r.violations.first() {
        None => Ok(()),
        Some(n) => Err(format!(
            "step {n}: ratio {} exceeds 1 - eps = {}",
            r.ratios[*n],
            1.0 - r.eps
        )),
    }
}

fn check_one_step(inst: &FiniteInstance) -> Result<(), String> {
    let r = one_step_bound_check(inst).map_err(|e| e.to_string())?;
    if r.holds {
        Ok(())
    } else {
        Err(format!("one-step distance {} exceeds {}", r.lhs, r.rhs))
    }
}

fn check_bound_chain(inst: &FiniteInstance) -> Result<(), String> {
    final_bound(inst).map(|_| ()).map_err(|e| e.to_string())
}

/// Runs one randomized instance of `suite`.
fn run_instance(suite: Suite, seed: u64, index: usize) -> Option<Failure> {
    let mut rng = instance_rng(seed, suite, index);
    let k = random_states(&mut rng);
    let fail = |message: String, instance: Option<FiniteInstance>| Failure {
        suite,
        index,
        message,
        instance,
    };
    let with_instance = |inst: FiniteInstance, r: Result<(), String>| {
        r.err().map(|m| fail(m, Some(inst)))
    };
    match suite {
        Suite::Kernel => {
            let inst = random_instance(k, SUITE_FLOOR, &mut rng);
            let r = check_kernel(&inst);
            with_instance(inst, r)
        }
        Suite::ExactRatio => {
            let base = random_instance(k, SUITE_FLOOR, &mut rng);
            let r = check_exact_ratio(base.p.clone(), base.q.clone());
            with_instance(base, r)
        }
        Suite::Decay => {
            let inst = random_instance(k, SUITE_FLOOR, &mut rng);
            let t0 = dirichlet_ones(k, &mut rng);
            let r = check_decay(&inst, &t0);
            with_instance(inst, r)
        }
        Suite::OneStep => {
            let inst = random_instance(k, SUITE_FLOOR, &mut rng);
            let r = check_one_step(&inst);
            with_instance(inst, r)
        }
        Suite::Pinsker => {
            let alpha = dirichlet_ones(k, &mut rng);
            let f: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..=2.0)).collect();
            match extended_pinsker(&alpha, &f) {
                Ok(r) if r.holds => None,
                Ok(r) => Some(fail(
                    format!("alpha {alpha:?}, f {f:?}: TV^2 {} exceeds {}", r.lhs, r.rhs),
                    None,
                )),
                Err(e) => Some(fail(e.to_string(), None)),
            }
        }
        Suite::BoundChain => {
            let inst = random_instance(k, SUITE_FLOOR, &mut rng);
            let r = check_bound_chain(&inst);
            with_instance(inst, r)
        }
        Suite::RankOne => {
            let nu = dirichlet_ones(k, &mut rng);
            let t: Table = (0..k).map(|x| vec![nu[x]; k]).collect();
            let t0 = dirichlet_ones(k, &mut rng);
            match geometric_decay_check(&t, &t0, 5) {
                Ok(r) if r.step_tvs[1..].iter().all(|v| *v <= 1e-12) && r.violations.is_empty() => None,
                Ok(r) => Some(fail(format!("moved after the first step: {:?}", r.step_tvs), None)),
                Err(e) => Some(fail(e.to_string(), None)),
            }
        }
    }
}

/// Runs `instances` randomized instances of each suite, spread over the
/// available cores; results are merged in instance order.
pub fn run_suites(suites: &[Suite], seed: u64, instances: usize) -> VerifyReport {
    let workers = std::thread::available_parallelism()
        .map(usize::from)
        .unwrap_or(1)
        .min(instances.max(1));
    let reports: Vec<SuiteReport> = suites
        .iter()
        .map(|&suite| {
            let mut results: Vec<(usize, Option<Failure>)> = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        scope.spawn(move || {
                            (w..instances)
                                .step_by(workers)
                                .map(|i| (i, run_instance(suite, seed, i)))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("verification worker panicked"))
                    .collect()
            });
            results.sort_by_key(|(i, _)| *i);
            let failures: Vec<Failure> = results.into_iter().filter_map(|(_, f)| f).collect();
            SuiteReport {
                suite,
                instances,
                passed: instances - failures.len(),
                failures,
            }
        })
        .collect();
    let all_passed = reports.iter().all(|r| r.failures.is_empty());
    VerifyReport {
        seed,
        suites: reports,
        all_passed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum ReplayReport {
    /// The instance broke an invariant and was not checked.
    Rejected { reason: String },
    Checked {
        passed: Vec<Suite>,
        failures: Vec<Failure>,
    },
}

/// Accepts a bare instance or a failure record containing one.
pub fn parse_replay(text: &str) -> anyhow::Result<FiniteInstance> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let inner = match value.get("instance") {
        Some(v) => v.clone(),
        None => value,
    };
    Ok(serde_json::from_value(inner)?)
}

/// Validates, then runs every instance-level check.
pub fn replay(inst: &FiniteInstance) -> ReplayReport {
    if let Err(e) = inst.validate() {
        return ReplayReport::Rejected {
            reason: e.to_string(),
        };
    }
    let k = inst.states();
    let uniform = vec![1.0 / k as f64; k];
    let checks: [(Suite, Result<(), String>); 5] = [
        (Suite::Kernel, check_kernel(inst)),
        (Suite::ExactRatio, check_exact_ratio(inst.p.clone(), inst.q.clone())),
        (Suite::Decay, check_decay(inst, &uniform)),
        (Suite::OneStep, check_one_step(inst)),
        (Suite::BoundChain, check_bound_chain(inst)),
    ];
    let mut passed = Vec::new();
    let mut failures = Vec::new();
    for (suite, r) in checks {
        match r {
            Ok(()) => passed.push(suite),
            Err(message) => failures.push(Failure {
                suite,
                index: 0,
                message,
                instance: Some(inst.clone()),
            }),
        }
    }
    ReplayReport::Checked { passed, failures }
}
