//! Analytic loss gradients against central finite differences.

use imh_core::discriminator::{Architecture, Discriminator, HeadKind, Network};
use imh_core::distributions::Point;
use imh_core::losses::{gradient_check, LossKind, PairBatch};
use imh_core::rng::stream;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const COORDS_PER_LOSS: usize = 200;

fn random_net(arch: Architecture, scale: f64, seed: u64) -> Network {
    let mut rng = stream(seed, 0);
    let normal = Normal::new(0.0, scale).unwrap();
    let params = (0..arch.param_count()).map(|_| normal.sample(&mut rng)).collect();
    Network::from_params(arch, params).unwrap()
}

fn scalar_pairs(n: usize, seed: u64) -> PairBatch {
    let mut rng = stream(seed, 1);
    let normal = Normal::new(0.0, 2.0).unwrap();
    PairBatch::new(
        (0..n)
            .map(|_| {
                (
                    Point::scalar(normal.sample(&mut rng)),
                    Point::scalar(normal.sample(&mut rng)),
                )
            })
            .collect(),
    )
}

fn state_pairs(k: usize, seed: u64) -> PairBatch {
    let mut rng = stream(seed, 2);
    let raw: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut batch = PairBatch::new(
        (0..k)
            .flat_map(|x| (0..k).map(move |y| (Point::state(x), Point::state(y))))
            .collect(),
    );
    batch.weights = Some(raw.iter().map(|w| w / total).collect());
    batch
}

fn cases(kind: LossKind) -> Vec<(Discriminator, PairBatch)> {
    let mlp = Architecture::Mlp {
        input_dim: 1,
        hidden: vec![12, 12],
    };
    let mut out = Vec::new();
    for (seed, floor) in [(1, 0.0), (2, 0.1)] {
        match kind {
            LossKind::CCE => {
                out.push((
                    Discriminator::new(HeadKind::FactorizedIndependent, floor, random_net(mlp.clone(), 0.5, seed)).unwrap(),
                    scalar_pairs(16, seed),
                ));
                out.push((
                    Discriminator::new(
                        HeadKind::FactorizedIndependent,
                        floor,
                        random_net(Architecture::PointTable { states: 5 }, 1.0, seed),
                    )
                    .unwrap(),
                    state_pairs(5, seed),
                ));
            }
            _ => {
                out.push((
                    Discriminator::new(HeadKind::PairwiseLogitDiff, floor, random_net(mlp.clone(), 0.5, seed)).unwrap(),
                    scalar_pairs(16, seed),
                ));
                out.push((
                    Discriminator::new(
                        HeadKind::Tabular,
                        floor,
                        random_net(Architecture::PairTable { states: 5 }, 1.0, seed),
                    )
                    .unwrap(),
                    state_pairs(5, seed),
                ));
            }
        }
    }
    out
}

#[test]
fn all_losses_match_finite_differences() {
    for kind in LossKind::ALL {
        let mut checked = 0;
        for (i, (disc, batch)) in cases(kind).into_iter().enumerate() {
            let n = disc.net.param_count();
            let mut rng = stream(99, i as u64);
            let coords = sample(&mut rng, n, n.min(COORDS_PER_LOSS / 2)).into_vec();
            let r = gradient_check(kind, &disc, &batch, &coords, STEP).unwrap();
            assert!(
                r.max_rel_error <= REL_TOL,
                "{} case {i}: relative error {} at {:?}",
                kind.name(),
                r.max_rel_error,
                r.worst
            );
            checked += r.checked;
        }
        assert!(checked >= COORDS_PER_LOSS, "{}: only {checked} coordinates", kind.name());
    }
}

#[test]
fn kink_crossings_are_skipped_not_compared() {
    // a tiny hidden layer with an input placed right at a kink
    let arch = Architecture::Mlp {
        input_dim: 1,
        hidden: vec![1],
    };
    let net = Network::from_params(arch, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let disc = Discriminator::new(HeadKind::PairwiseLogitDiff, 0.0, net).unwrap();
    let batch = PairBatch::new(vec![(Point::scalar(1e-7), Point::scalar(1.0))]);
    let r = gradient_check(LossKind::MCE, &disc, &batch, &[1], STEP).unwrap();
    assert_eq!((r.checked, r.skipped), (0, 1));
    let r = gradient_check(LossKind::MCE, &disc, &batch, &[0, 2, 3], STEP).unwrap();
    assert_eq!(r.checked + r.skipped, 3);
    assert!(r.max_rel_error <= REL_TOL);
}
