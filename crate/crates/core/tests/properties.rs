use imh_core::bounds::{
    assemble_kernel, exact_ratio_instance, extended_pinsker, final_bound, random_instance,
    tv_discrete,
};
use imh_core::discriminator::{read_checkpoint, write_checkpoint, Architecture, Discriminator, HeadKind, Network};
use imh_core::distributions::Point;
use imh_core::losses::{dre_extract, pointwise_inequalities, LossKind};
use imh_core::rng::stream;
use proptest::prelude::*;

fn mlp_disc(head: HeadKind, floor: f64, params: &[f64]) -> Discriminator {
    let arch = Architecture::Mlp {
        input_dim: 1,
        hidden: vec![3],
    };
    let net = Network::from_params(arch, params.to_vec()).unwrap();
    Discriminator::new(head, floor, net).unwrap()
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn floored_pairwise_ratio_stays_in_band(
        params in prop::collection::vec(-3.0..3.0f64, 10),
        floor in 0.01..0.9f64,
        x in -5.0..5.0f64,
        y in -5.0..5.0f64,
    ) {
        let disc = mlp_disc(HeadKind::PairwiseLogitDiff, floor, &params);
        let f = disc.pair_forward(&Point::scalar(x), &Point::scalar(y)).unwrap();
        prop_assert!(f.d_xy >= floor && f.d_xy <= 1.0);
        let r = dre_extract(LossKind::UB, &disc, &Point::scalar(x), &Point::scalar(y)).unwrap();
        prop_assert!(r >= floor * (1.0 - 1e-12) && r <= (1.0 + 1e-12) / floor);
        let back = dre_extract(LossKind::UB, &disc, &Point::scalar(y), &Point::scalar(x)).unwrap();
        prop_assert!((r * back - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unfloored_pairwise_values_sum_to_one(
        params in prop::collection::vec(-3.0..3.0f64, 10),
        x in -5.0..5.0f64,
        y in -5.0..5.0f64,
    ) {
        let disc = mlp_disc(HeadKind::PairwiseLogitDiff, 0.0, &params);
        let f = disc.pair_forward(&Point::scalar(x), &Point::scalar(y)).unwrap();
        prop_assert_eq!(f.d_xy + f.d_yx, 1.0);
    }

    #[test]
    fn assembled_kernels_are_column_stochastic(seed in any::<u64>(), k in 2usize..7, b in 0.05..1.0f64) {
        let inst = random_instance(k, b, &mut stream(seed, 0));
        let t = assemble_kernel(&inst);
        for y in 0..k {
            let col: f64 = (0..k).map(|x| t[x][y]).sum();
            prop_assert!((col - 1.0).abs() < 1e-14);
            prop_assert!((0..k).all(|x| t[x][y] >= 0.0));
        }
    }

    #[test]
    fn exact_ratio_kernels_are_reversible(seed in any::<u64>(), k in 2usize..7) {
        let base = random_instance(k, 0.1, &mut stream(seed, 0));
        let inst = exact_ratio_instance(base.p.clone(), base.q.clone());
        let t = assemble_kernel(&inst);
        for x in 0..k {
            for y in 0..k {
                prop_assert!((t[x][y] * inst.p[y] - t[y][x] * inst.p[x]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bound_chain_holds(seed in any::<u64>(), k in 2usize..7, b in 0.05..1.0f64) {
        let inst = random_instance(k, b, &mut stream(seed, 0));
        let r = final_bound(&inst).unwrap();
        prop_assert!(r.chain.windows(2).all(|w| w[0] <= w[1] + 1e-12 * w[1].abs().max(1.0)));
        prop_assert!(r.c_exact <= r.c_bound + 1e-12);
    }

    #[test]
    fn pointwise_inequalities_hold(
        b in 0.01..1.0f64,
        u in 0.0..1.0f64,
        v in 0.0..1.0f64,
        dx in 1e-6..(1.0 - 1e-6),
        dy in 1e-6..(1.0 - 1e-6),
    ) {
        let (dxy, dyx) = (b + (1.0 - b) * u, b + (1.0 - b) * v);
        let r = pointwise_inequalities(dxy, dyx, dx, dy, b);
        prop_assert!(r.markov.holds, "{:?}", r.markov);
        let ratio = dy * (1.0 - dx) / (dx * (1.0 - dy));
        if ratio >= b && ratio <= 1.0 / b {
            prop_assert!(r.independent.holds, "{:?}", r.independent);
        }
    }

    #[test]
    fn tv_is_a_symmetric_unit_distance(
        a in prop::collection::vec(0.01..1.0f64, 5),
        c in prop::collection::vec(0.01..1.0f64, 5),
    ) {
        let (a, c) = (simplex(&a), simplex(&c));
        let ac = tv_discrete(&a, &c).unwrap();
        prop_assert_eq!(ac, tv_discrete(&c, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ac));
        prop_assert_eq!(tv_discrete(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn extended_pinsker_holds(
        a in prop::collection::vec(0.01..1.0f64, 6),
        f in prop::collection::vec(0.01..2.0f64, 6),
    ) {
        let r = extended_pinsker(&simplex(&a), &f).unwrap();
        prop_assert!(r.holds, "{:?}", r);
    }

    #[test]
    fn checkpoints_round_trip_bitwise(params in prop::collection::vec(-1e3..1e3f64, 10), seed in any::<u64>(), it in any::<u64>()) {
        let disc = mlp_disc(HeadKind::FactorizedIndependent, 0.25, &params);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &disc, seed, it).unwrap();
        let (header, back) = read_checkpoint(bytes.as_slice()).unwrap();
        prop_assert_eq!((header.seed, header.iteration), (seed, it));
        prop_assert_eq!(back.net.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            disc.net.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
