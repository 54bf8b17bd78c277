//! Chains against exact kernels, moments and the analytic sampler.

use approx::assert_relative_eq;
use imh_core::bounds::{
    assemble_kernel, exact_ratio_instance, histogram_tv, random_instance, stationary_of_kernel,
    FiniteInstance, QuadratureGrid, HISTOGRAM_BINS,
};
use imh_core::discriminator::{Architecture, Discriminator, HeadKind, Network};
use imh_core::distributions::{DensitySpec, Point};
use imh_core::proposals::{invert_generator, GeneratorMap, ProposalKernel};
use imh_core::rng::stream;
use imh_core::sampler::{run_chain, AcceptanceRule};

fn table_disc(d: &[Vec<f64>]) -> Discriminator {
    let k = d.len();
    let params = (0..k)
        .flat_map(|x| (0..k).map(move |y| (x, y)))
        .map(|(x, y)| {
            let v = d[x][y].min(1.0 - 1e-15);
            (v / (1.0 - v)).ln()
        })
        .collect();
    let net = Network::from_params(Architecture::PairTable { states: k }, params).unwrap();
    Discriminator::new(HeadKind::Tabular, 0.0, net).unwrap()
}

fn finite_kernel(inst: &FiniteInstance) -> ProposalKernel {
    ProposalKernel::FiniteMatrix {
        matrix: inst.q.clone(),
    }
}

fn frequencies(points: &[Point], k: usize) -> Vec<f64> {
    let mut f = vec![0.0; k];
    for p in points {
        f[p.as_state(k).unwrap()] += 1.0 / points.len() as f64;
    }
    f
}

#[test]
fn exact_ratio_chain_reproduces_analytic_chain() {
    for i in 0..5 {
        let base = random_instance(5, 0.1, &mut stream(40, i));
        let exact = exact_ratio_instance(base.p.clone(), base.q.clone());
        let kernel = finite_kernel(&base);
        let analytic = AcceptanceRule::Analytic {
            target: DensitySpec::categorical(base.p.clone()).unwrap(),
            proposal: kernel.clone(),
        };
        let learned = AcceptanceRule::Pairwise {
            disc: table_disc(&exact.d),
        };
        let a = run_chain(&analytic, &kernel, &Point::state(0), None, 100_000, i).unwrap();
        let b = run_chain(&learned, &kernel, &Point::state(0), None, 100_000, i).unwrap();
        assert_eq!(a.accepted, b.accepted);
        assert_eq!(a.points, b.points);
    }
}

#[test]
fn chain_frequencies_match_kernel_stationary() {
    for i in 0..3 {
        let inst = random_instance(4, 0.1, &mut stream(41, i));
        let exact = stationary_of_kernel(&assemble_kernel(&inst)).unwrap();
        let rule = AcceptanceRule::Pairwise {
            disc: table_disc(&inst.d),
        };
        let chain = run_chain(&rule, &finite_kernel(&inst), &Point::state(0), None, 1_000_000, i).unwrap();
        for (f, s) in frequencies(&chain.points, 4).iter().zip(&exact) {
            assert!((f - s).abs() < 5e-3, "{f} vs {s}");
        }
    }
}

#[test]
fn mixture_sample_moments() {
    let p = DensitySpec::two_mode_mixture();
    let xs = p.sample(200_000, &mut stream(42, 0)).unwrap().scalars();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // 0.5 (0.25 + 4) + 0.5 (0.49 + 4)
    assert!(mean.abs() < 0.025, "{mean}");
    assert!((var - 4.37).abs() < 0.05, "{var}");
}

#[test]
fn spherical_move_preserves_standard_normal() {
    let angle = std::f64::consts::FRAC_PI_3;
    let kernel = ProposalKernel::LatentSpherical {
        angle,
        generator: GeneratorMap::Identity { dim: 1 },
    };
    let mut rng = stream(43, 0);
    let n = 200_000;
    let (mut s1, mut s2, mut cross) = (0.0, 0.0, 0.0);
    let mut z = vec![0.3];
    for _ in 0..n {
        let next = kernel.propose(&Point::scalar(z[0]), Some(&z), &mut rng).unwrap();
        let zn = next.latent.unwrap();
        s1 += zn[0];
        s2 += zn[0] * zn[0];
        cross += z[0] * zn[0];
        z = zn;
    }
    let nf = n as f64;
    assert!((s1 / nf).abs() < 0.02);
    assert!((s2 / nf - 1.0).abs() < 0.02);
    assert!((cross / nf - angle.cos()).abs() < 0.02);
}

#[test]
fn affine_and_tanh_inversion_recover_codes() {
    let matrix = vec![vec![1.5, -0.5], vec![0.25, 1.0]];
    let bias = vec![0.1, -0.2];
    let z = [0.4, -0.7];
    for g in [
        GeneratorMap::Affine {
            matrix: matrix.clone(),
            bias: bias.clone(),
        },
        GeneratorMap::TanhAffine {
            matrix: matrix.clone(),
            bias: bias.clone(),
        },
    ] {
        let x = Point::new(g.apply(&z).unwrap()).unwrap();
        let inv = invert_generator(&g, &x, 5000, 0.1).unwrap();
        assert!(inv.error < 1e-20, "{g:?}: {}", inv.error);
        for (a, b) in inv.latent.iter().zip(&z) {
            assert_relative_eq!(*a, *b, epsilon = 1e-9);
        }
    }
}

#[test]
fn analytic_random_walk_chain_matches_mixture() {
    let target = DensitySpec::two_mode_mixture();
    let kernel = ProposalKernel::RandomWalk { stddev: 1.0 };
    let rule = AcceptanceRule::Analytic {
        target: target.clone(),
        proposal: kernel.clone(),
    };
    let chain = run_chain(&rule, &kernel, &Point::scalar(0.0), None, 100_000, 5).unwrap();
    let tv = histogram_tv(&chain.scalars(), &target, QuadratureGrid::default().half_width, HISTOGRAM_BINS).unwrap();
    assert!(tv <= 0.05, "{tv}");
}
