mod common;

use std::sync::Arc;

use common::{kalman, random_system, simulate_linear, Linear};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sympid::dataset::{NoiseSpec, ObservedTrajectory};
use sympid::filter::{
    filter_log_likelihood, multi_trajectory_log_likelihood, IdentityObservation, ModelSkeleton, NoiseParams,
    UkfConfig,
};
use sympid::hamiltonian::cherry_coefficients;
use sympid::inference::ParameterVector;
use sympid::{BasisDictionary, BasisKind, PhaseState, Propagator, Scheme, TaoConfig};

#[test]
fn ukf_matches_kalman_on_linear_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = UkfConfig::default();
    for draw in 0..20 {
        let a = random_system(&mut rng, 4);
        let k = 1 + draw % 3;
        let (sigma, gamma) = (rng.gen_range(1e-4..1e-2), rng.gen_range(1e-4..1e-2));
        let ys = simulate_linear(&mut rng, &a, 50, k, sigma, gamma);
        let noise = NoiseParams::new(sigma, gamma).unwrap();
        let ukf = filter_log_likelihood(&ys, k, &Linear(a.clone()), &IdentityObservation, &noise, &cfg).unwrap();
        let oracle = kalman(&a, &ys, k, sigma, gamma);
        let rel = ((ukf - oracle) / oracle).abs();
        assert!(rel <= 1e-8, "draw {draw}: ukf {ukf} kalman {oracle} rel {rel}");
    }
}

#[test]
fn log_likelihood_decreases_with_process_noise_on_exact_data() {
    // exact data from the mean dynamics: every innovation is zero and the
    // innovation covariance grows with σ
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_system(&mut rng, 4);
    let ys = simulate_linear(&mut rng, &a, 30, 2, 0.0, 0.0);
    let cfg = UkfConfig::default();
    let ll = |sigma: f64| {
        let noise = NoiseParams::new(sigma, 1e-3).unwrap();
        filter_log_likelihood(&ys, 2, &Linear(a.clone()), &IdentityObservation, &noise, &cfg).unwrap()
    };
    let values: Vec<f64> = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2].iter().map(|&s| ll(s)).collect();
    for w in values.windows(2) {
        assert!(w[0] > w[1], "{values:?}");
    }
}

fn cherry_trajectory(x0: [f64; 4], n_obs: usize) -> ObservedTrajectory {
    let prop = Propagator::new(
        sympid::CherryHamiltonian,
        Scheme::Tao(TaoConfig::new(10.0, 0.01).unwrap()),
    )
    .unwrap();
    let ic = PhaseState::from_slice(&x0).unwrap();
    let traj = prop.propagate(&ic, 40 * n_obs).unwrap();
    let rows: Vec<Vec<f64>> = traj.states.iter().step_by(40).map(|s| s.to_vec()).collect();
    ObservedTrajectory {
        initial_condition: ic,
        times: (0..=n_obs).map(|k| 0.4 * k as f64).collect(),
        observations: rows.clone(),
        clean: rows,
        noise: NoiseSpec::none(0),
    }
}

#[test]
fn multi_trajectory_sum_is_permutation_invariant() {
    let dict = Arc::new(BasisDictionary::new(BasisKind::Monomial, 4, 3).unwrap());
    let mut coeffs = cherry_coefficients(&dict).unwrap();
    coeffs[3] += 0.01;
    let theta = ParameterVector::new(coeffs, 1e-5, 1e-4).unwrap();
    let skeleton = ModelSkeleton::new(dict, Scheme::Tao(TaoConfig::new(10.0, 0.05).unwrap())).unwrap();
    let data = vec![
        cherry_trajectory([0.15, 0.1, -0.05, 0.1], 10),
        cherry_trajectory([0.1, 0.12, -0.02, 0.08], 10),
        cherry_trajectory([0.2, 0.05, -0.1, 0.12], 10),
    ];
    let cfg = UkfConfig::default();
    let base = multi_trajectory_log_likelihood(&data, &theta, &skeleton, &cfg).unwrap();
    assert!(base.is_finite());
    for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0], [0, 2, 1], [2, 0, 1]] {
        let shuffled: Vec<_> = perm.iter().map(|&i| data[i].clone()).collect();
        let ll = multi_trajectory_log_likelihood(&shuffled, &theta, &skeleton, &cfg).unwrap();
        assert_eq!(ll.to_bits(), base.to_bits());
    }
}
