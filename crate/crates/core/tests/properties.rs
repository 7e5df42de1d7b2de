use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

use urnflow::embedding::simulate_tree_with;
use urnflow::limits;
use urnflow::model::{exact_distribution, Probability, ReplacementLaw};
use urnflow::rng;
use urnflow::spectral::{cnorm, decompose, CMat, EPS_SPEC};
use urnflow::stats;
use urnflow::urn::UrnState;

/// Columns of one, two or four equally likely offspring vectors with entries in
/// `0..=3`.
fn law_strategy() -> impl Strategy<Value = ReplacementLaw> {
    (2usize..=3).prop_flat_map(|dim| {
        let column = prop::sample::select(vec![1usize, 2, 4])
            .prop_flat_map(move |k| prop::collection::vec(prop::collection::vec(0u64..=3, dim), k));
        prop::collection::vec(column, dim).prop_map(move |cols| {
            let columns = cols
                .into_iter()
                .map(|col| {
                    let p = 1.0 / col.len() as f64;
                    col.into_iter().map(|o| (o, p)).collect()
                })
                .collect();
            ReplacementLaw::new(dim, columns).unwrap()
        })
    })
}

fn positive_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=4).prop_flat_map(|n| {
        prop::collection::vec(1u32..=9, n * n)
            .prop_map(move |v| DMatrix::from_iterator(n, n, v.into_iter().map(f64::from)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn urn_conserves_balls(law in law_strategy(), seed in any::<u64>(), steps in 1u64..300) {
        let mut rng = rng::stream(seed, 0);
        let mut s = UrnState::init(law.dim(), 0);
        let mut prev = s.b.clone();
        for _ in 0..steps {
            if s.is_extinct() {
                break;
            }
            s.step(&law, &mut rng).unwrap();
            let held: u64 = s.counts_active.iter().chain(&s.counts_passive).sum();
            prop_assert_eq!(held + s.draws, s.b.iter().sum::<u64>());
            prop_assert!(s.b.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = s.b.clone();
        }
        prop_assert!(s.draws <= steps);
    }

    #[test]
    fn exact_law_is_a_probability(law in law_strategy(), n in 1usize..=3) {
        let dist = exact_distribution(&law, 0, n).unwrap();
        let mut total = BigRational::zero();
        for (_, p) in &dist {
            match p {
                Probability::Exact(q) => {
                    prop_assert!(*q > BigRational::zero());
                    total += q;
                }
                Probability::Approx(_) => prop_assert!(false, "dyadic law gave a float probability"),
            }
        }
        prop_assert_eq!(total, BigRational::one());
    }

    #[test]
    fn tree_counts_follow_the_jumps(law in law_strategy(), seed in any::<u64>()) {
        let tree = simulate_tree_with(&law, 0, 5, 100_000, &mut rng::stream(seed, 0)).unwrap();
        let pop = tree.population();
        for k in 1..=pop.min(200) {
            let t = tree.tau_position(k).unwrap();
            prop_assert_eq!(tree.count_total(t).unwrap(), k);
            let b = tree.b_vector(k).unwrap();
            let born: u64 = (0..law.dim()).map(|j| tree.count_type(j, t).unwrap()).sum();
            prop_assert_eq!(b.iter().sum::<u64>(), born + 1);
        }
        for g in 0..tree.depth() {
            let total = tree.count_total(g as f64 + 1.0 - 1e-12).unwrap();
            let born: u64 = (1..=g).map(|h| tree.z(h).iter().sum::<u64>()).sum();
            prop_assert_eq!(total, born + 1);
        }
    }

    #[test]
    fn spectral_projections_are_consistent(a in positive_matrix()) {
        let sd = decompose(&a).unwrap();
        let n = sd.dim;
        let id = CMat::identity(n, n);
        let mut sum = CMat::zeros(n, n);
        let mut recon = CMat::zeros(n, n);
        for e in &sd.eigs {
            sum += &e.pi;
            recon += &e.pi * e.lambda + &e.nilpotent;
            prop_assert!(cnorm(&(&e.pi * &e.pi - &e.pi)) <= EPS_SPEC);
        }
        prop_assert!(cnorm(&(sum - id)) <= EPS_SPEC);
        prop_assert!(cnorm(&(recon - sd.a_complex())) <= EPS_SPEC);
        prop_assert!((sd.u.sum() - 1.0).abs() <= EPS_SPEC);
        prop_assert!((sd.v.dot(&sd.u) - 1.0).abs() <= EPS_SPEC);
        prop_assert!(sd.u.iter().chain(sd.v.iter()).all(|&x| x > 0.0));
        for j in 0..n {
            prop_assert!(limits::w_vector(&sd, j).dot(&sd.u).abs() <= EPS_SPEC * sd.rho);
        }
    }

    #[test]
    fn time_change_round_trips(rho in 1.01f64..20.0, x in 0.0f64..40.0) {
        prop_assert!((limits::h(rho, limits::h_inv(rho, x)) - x).abs() <= 1e-12 * x.max(1.0));
        prop_assert!((limits::h_inv(rho, limits::h(rho, x)) - x).abs() <= 1e-12 * x.max(1.0));
        prop_assert_eq!(limits::h(rho, x.floor()), x.floor());
    }

    #[test]
    fn interpolation_identity(re in -4.0f64..4.0, im in -4.0f64..4.0, x in -6.0f64..6.0) {
        let lambda = Complex64::new(re, im);
        prop_assume!(lambda.norm() > 0.1);
        let lhs = (lambda.ln() * x).exp() * limits::l_lambda(lambda, x);
        let fl = x.floor();
        let rhs = lambda.powf(fl) * (Complex64::new(1.0, 0.0) + (lambda - 1.0) * (x - fl));
        prop_assert!((lhs - rhs).norm() <= 1e-11 * rhs.norm().max(1.0));
        let shifted = limits::l_lambda(lambda, x + 1.0) - limits::l_lambda(lambda, x);
        prop_assert!(shifted.norm() <= 1e-11 * limits::l_lambda(lambda, x).norm().max(1.0));
    }

    #[test]
    fn test_statistics_stay_in_range(v in prop::collection::vec(-10.0f64..10.0, 20..200)) {
        for r in [stats::ks_test(&v).unwrap(), stats::ad_test(&v).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!(r.statistic >= 0.0);
        }
        let ks = stats::ks_test(&v).unwrap();
        prop_assert!(ks.statistic <= 1.0);
    }

    #[test]
    fn chi_square_tail_decreases(x in 0.0f64..50.0, dx in 0.01f64..5.0, df in 1usize..30) {
        prop_assert!(stats::chi_square_sf(x + dx, df) <= stats::chi_square_sf(x, df));
    }
}
