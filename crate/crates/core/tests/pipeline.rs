use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sympid::dataset::{NoiseKind, NoiseSpec};
use sympid::experiments::{
    fit_map_on, generate_data, learning_skeleton, ls_fit_on, prediction_skeleton, run_experiment, ExperimentConfig,
    Mode,
};
use sympid::inference::{map_trajectory, ParameterVector, Posterior};

fn small(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.optimizer.max_evaluations = 200;
    cfg.optimizer.restarts = 1;
    cfg.optimizer.polish_max_evaluations = 200;
    cfg.mcmc.n_samples = 40;
    cfg.mcmc.burn_in = Some(0);
    cfg.prediction.horizon = 4.0;
    cfg.prediction.train_end = 2.0;
    cfg.prediction.thin = 4;
    cfg
}

#[test]
fn map_never_below_start() {
    let cfg = small(ExperimentConfig::single_ic());
    let data = generate_data(&cfg).unwrap();
    let ls = ls_fit_on(&cfg, &data).unwrap();
    for mode in [Mode::SingleIcSymplectic, Mode::SingleIcRk2] {
        let fit = fit_map_on(&cfg, mode, &data, &ls).unwrap();
        assert!(fit.result.log_density >= fit.result.start_log_density);
        let skeleton = learning_skeleton(&cfg, mode).unwrap();
        let post = Posterior::new(&data.trajectories, cfg.prior, &skeleton, cfg.ukf).unwrap();
        assert_eq!(post.log_posterior(&fit.theta).unwrap(), fit.result.log_density);
        assert_eq!(post.log_posterior(&fit.start).unwrap(), fit.result.start_log_density);
    }
}

#[test]
fn map_trajectory_in_bundle_matches_direct_call() {
    let cfg = small(ExperimentConfig::single_ic());
    let result = run_experiment(&cfg, Mode::SingleIcSymplectic).unwrap();
    let theta = result.map_theta.as_ref().unwrap();
    let direct = map_trajectory(
        theta,
        &prediction_skeleton(&cfg).unwrap(),
        &cfg.data.test_ic().unwrap(),
        cfg.prediction.steps(),
    )
    .unwrap();
    assert_eq!(result.map_trajectory.as_ref().unwrap(), &direct.trajectory);
    let m = &result.metrics;
    assert_eq!(m.estimator, "map");
    assert_eq!(m.train_error, m.map_train_error);
    assert!((m.h_true + 0.00775).abs() < 1e-15);
}

#[test]
fn single_sample_chain_predicts_its_own_trajectory() {
    let mut cfg = small(ExperimentConfig::single_ic());
    cfg.mcmc.n_samples = 1;
    cfg.prediction.thin = 1;
    let result = run_experiment(&cfg, Mode::SingleIcSymplectic).unwrap();
    let chain = result.chain.as_ref().unwrap();
    assert_eq!(chain.retained().len(), 1);
    let sample = ParameterVector::from_flat(&chain.retained()[0]).unwrap();
    let own = map_trajectory(
        &sample,
        &prediction_skeleton(&cfg).unwrap(),
        &cfg.data.test_ic().unwrap(),
        cfg.prediction.steps(),
    )
    .unwrap();
    let pred = result.predictive.as_ref().unwrap();
    assert_eq!(pred.mean, own.trajectory);
    if &sample == result.map_theta.as_ref().unwrap() {
        assert_eq!(&pred.mean, result.map_trajectory.as_ref().unwrap());
    }
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn identical_config_gives_identical_bundle() {
    let cfg = small(ExperimentConfig::multi_ic());
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(&cfg, Mode::MultiIcBayes).unwrap().write(&a).unwrap();
    run_experiment(&cfg, Mode::MultiIcBayes).unwrap().write(&b).unwrap();
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert!(ta.contains_key("metrics.json") && ta.contains_key("chain.csv"));
    assert_eq!(ta, tb);
}

#[test]
fn ls_mode_reports_ls_errors() {
    let cfg = small(ExperimentConfig::multi_ic());
    let result = run_experiment(&cfg, Mode::MultiIcLs).unwrap();
    assert!(result.chain.is_none());
    assert_eq!(result.metrics.estimator, "ls");
    assert_eq!(result.metrics.horizon_10pct, result.metrics.ls_horizon_10pct.unwrap());
}

#[test]
fn noise_bounds_over_a_million_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let rel = NoiseSpec { kind: NoiseKind::RelativeUniform(0.1), seed: 0 };
    let mut worst = 0.0f64;
    for i in 0..1_000_000 {
        let x = 0.01 + (i % 997) as f64 * 0.37 - 150.0;
        let y = rel.perturb(x, &mut rng);
        worst = worst.max((y - x).abs() / x.abs());
    }
    assert!(worst <= 0.1, "worst relative perturbation {worst}");
    assert!(worst > 0.0999);

    let sigma = 0.01;
    let add = NoiseSpec { kind: NoiseKind::AdditiveGaussian(sigma), seed: 0 };
    let n = 1_000_000;
    let draws: Vec<f64> = (0..n).map(|_| add.perturb(2.0, &mut rng) - 2.0).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((sd - sigma).abs() <= 0.01 * sigma, "sample sd {sd}");
}
