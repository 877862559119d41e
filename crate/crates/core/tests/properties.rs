use diws_core::matrix::{symmetric_eigenvalues, Matrix};
use diws_core::metrics::{kendall_tau, prediction_pd};
use diws_core::netcore::Batch;
use diws_core::ogd::{batch_projection, ProjectionState};
use diws_core::rng::SplitMix64;
use diws_core::searchspace::{sample_uniform, ArchEncoding, CellSpec, SharedParamStore};
use proptest::prelude::*;

fn gaussian(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursive_projection_matches_closed_form(
        seed in any::<u64>(),
        d in 1usize..=12,
        n in 1usize..=20,
        lambda in prop::sample::select(vec![0.1, 1.0, 10.0]),
    ) {
        let x = gaussian(seed, d, n);
        let mut state = ProjectionState::new(d, lambda).unwrap();
        for j in 0..n {
            state.absorb_sample(&x.column(j)).unwrap();
        }
        let closed = batch_projection(&x, lambda).unwrap();
        prop_assert!(state.matrix().relative_error(&closed).unwrap() < 1e-8);
    }

    #[test]
    fn projection_is_a_symmetric_contraction(seed in any::<u64>(), d in 1usize..=10, n in 0usize..=30) {
        let x = gaussian(seed, d, n);
        let mut state = ProjectionState::new(d, 1.0).unwrap();
        for j in 0..n {
            state.absorb_sample(&x.column(j)).unwrap();
        }
        prop_assert!(state.matrix().max_asymmetry() == 0.0);
        let eig = symmetric_eigenvalues(state.matrix()).unwrap();
        prop_assert!(eig[0] > 0.0 && eig[d - 1] <= 1.0 + 1e-12, "{:?}", eig);
    }

    #[test]
    fn absorbing_never_grows_the_quadratic_form(seed in any::<u64>(), d in 1usize..=8) {
        let x = gaussian(seed, d, 6);
        let probe = gaussian(seed ^ 1, d, 1).into_vec();
        let mut state = ProjectionState::new(d, 1.0).unwrap();
        let mut prev = state.quadratic_form(&probe).unwrap();
        for j in 0..6 {
            state.absorb_sample(&x.column(j)).unwrap();
            let q = state.quadratic_form(&probe).unwrap();
            prop_assert!(q <= prev + 1e-12);
            prev = q;
        }
    }

    #[test]
    fn tau_is_bounded_symmetric_and_rank_invariant(
        a in prop::collection::vec(-5i32..5, 2..20),
        seed in any::<u64>(),
    ) {
        let mut rng = SplitMix64::new(seed);
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = a.iter().map(|_| rng.below(4) as f64).collect();
        let t = kendall_tau(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&t));
        prop_assert!((t - kendall_tau(&b, &a).unwrap()).abs() < 1e-12);
        let warped: Vec<f64> = a.iter().map(|v| (0.7 * v).exp() + 3.0).collect();
        prop_assert!((t - kendall_tau(&warped, &b).unwrap()).abs() < 1e-12);
        let flipped: Vec<f64> = a.iter().map(|v| -v).collect();
        prop_assert!((t + kendall_tau(&flipped, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn arch_strings_round_trip(index in 0u128..4096) {
        let cell = CellSpec::default();
        let arch = ArchEncoding::from_index(&cell, index);
        prop_assert_eq!(ArchEncoding::decode(&cell, &arch.encode()).unwrap(), arch);
    }

    #[test]
    fn prediction_pd_is_symmetric(seed in any::<u64>()) {
        let cell = CellSpec::default();
        let mut rng = SplitMix64::new(seed);
        let a = SharedParamStore::new(&cell, 3, 1.0, &mut rng).unwrap();
        let b = SharedParamStore::new(&cell, 3, 1.0, &mut rng).unwrap();
        let arch = sample_uniform(&cell, &mut rng);
        let x = Matrix::from_fn(5, 16, |_, _| rng.normal());
        let batch = Batch::new(x, vec![0, 1, 2, 0, 1], 3).unwrap();
        let ab = prediction_pd(&arch, &batch, &a, &b).unwrap();
        let ba = prediction_pd(&arch, &batch, &b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
    }
}
