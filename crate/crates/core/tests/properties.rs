use proptest::prelude::*;

use watermark_core::learning::identify::{
    estimate_char_poly, estimate_residues, markov_count, poly_roots,
};
use watermark_core::linalg::{greedy_match, min_eigenvalue, Mat};
use watermark_core::lti::{random_stable_system, solve_discrete_lyapunov, LinearSystem, SimState};
use watermark_core::watermark::{design_matrices, expected_kl, optimal_watermark, CostWeights};

fn system() -> impl Strategy<Value = LinearSystem> {
    (
        1usize..=5,
        1usize..=3,
        1usize..=3,
        any::<u64>(),
        0.2f64..0.95,
    )
        .prop_map(|(n, m, p, seed, rho)| random_stable_system(n, m, p, seed, rho).unwrap())
}

fn small_system() -> impl Strategy<Value = LinearSystem> {
    (1usize..=4, 1usize..=3, 1usize..=3, any::<u64>())
        .prop_map(|(n, m, p, seed)| random_stable_system(n, m, p, seed, 0.9).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lyapunov_residual_is_small(sys in system(), scale in 0.1f64..10.0) {
        let q = sys.q() * scale + sys.b() * sys.b().transpose();
        let sigma = solve_discrete_lyapunov(sys.a(), &q).unwrap();
        let residual = (&sigma - sys.a() * &sigma * sys.a().transpose() - &q).norm();
        prop_assert!(residual <= 1e-10 * q.norm().max(1.0), "residual {residual:e}");
    }

    #[test]
    fn modal_reconstruction_matches_markov_parameters(sys in system()) {
        let modal = sys.modal_decomposition().unwrap();
        let tau_max = 3 * sys.n() - 2;
        for (tau, h) in sys.markov_parameters(tau_max).iter().enumerate() {
            let rebuilt = modal.markov(tau).unwrap();
            prop_assert!((h - rebuilt).amax() <= 1e-9, "tau {tau}");
        }
    }

    #[test]
    fn zero_input_from_zero_state_stays_zero(sys in system(), steps in 1usize..50) {
        let mut state = SimState::new(sys.n(), 0);
        let zero_phi = watermark_core::linalg::Vector::zeros(sys.p());
        for _ in 0..steps {
            let y = sys
                .simulate_step_with_noise(
                    &mut state,
                    &zero_phi,
                    &watermark_core::linalg::Vector::zeros(sys.n()),
                    &watermark_core::linalg::Vector::zeros(sys.m()),
                )
                .unwrap();
            prop_assert!(y.iter().all(|v| *v == 0.0));
            prop_assert!(state.x.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn optimal_watermark_is_feasible_and_scales_linearly(sys in small_system(), delta in 0.1f64..50.0, factor in 1.01f64..10.0) {
        let modal = sys.modal_decomposition().unwrap();
        let wcal = sys.steady_output_cov().unwrap();
        let pair = design_matrices(&modal, &wcal, &CostWeights::identity(sys.m(), sys.p())).unwrap();
        let small = optimal_watermark(&pair, delta).unwrap();
        let large = optimal_watermark(&pair, delta * factor).unwrap();
        let u = &small.covariance.u;
        prop_assert!(min_eigenvalue(u) >= -1e-9 * u.norm());
        let budget = (u * &pair.x_mat).trace();
        prop_assert!((budget - delta).abs() <= 1e-8 * delta);
        let scaled = u * factor;
        prop_assert!((&large.covariance.u - &scaled).norm() <= 1e-8 * scaled.norm().max(1.0) || large.non_unique);
        let obj = |m: &Mat| (m * &pair.p_mat).trace();
        prop_assert!(obj(&large.covariance.u) >= obj(u) - 1e-12);
    }

    #[test]
    fn expected_kl_grows_with_scale(seed in any::<u64>(), c0 in 0.0f64..5.0, dc in 0.0f64..5.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = Mat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let h = Mat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let wcal = &g * g.transpose() + Mat::identity(3, 3);
        let ucal = &h * h.transpose();
        let a = expected_kl(&(&ucal * c0), &wcal).unwrap();
        let b = expected_kl(&(&ucal * (c0 + dc)), &wcal).unwrap();
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn exact_markov_data_is_identifiable(sys in small_system()) {
        let n = sys.n();
        let truth = sys.modal_decomposition().unwrap();
        let h = sys.markov_parameters(markov_count(n) - 1);
        let alpha = estimate_char_poly(&h, n).unwrap();
        let lambdas = poly_roots(&alpha);
        let residues = estimate_residues(&lambdas, &h).unwrap();
        for (i, j) in greedy_match(&lambdas, &truth.lambdas).into_iter().enumerate() {
            let j = j.unwrap();
            prop_assert!((lambdas[i] - truth.lambdas[j]).norm() <= 1e-7);
            prop_assert!((&residues[i] - &truth.residues[j]).norm() <= 1e-7);
        }
    }
}
