//! Data generation, error metrics and the end-to-end experiment pipelines.

mod bench;
mod config;

pub use bench::{likelihood_timing, loglog_slope, omega_sweep, OmegaSweepRow, TimingPoint};
pub use config::{
    DataConfig, ExperimentConfig, LsConfig, ModelConfig, PredictionConfig, SamplerConfig,
    StartConfig, StartKind, TruthSystem, TEST_IC,
};

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{NoiseSpec, ObservedTrajectory, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::filter::ModelSkeleton;
use crate::hamiltonian::{
    build_dictionary, BasisDictionary, CherryHamiltonian, Hamiltonian, HamiltonianModel, PhaseState,
};
use crate::inference::{
    dram_sample, find_map, map_trajectory, posterior_predictive_mean, ChainSidecar, MapResult,
    ParameterVector, Posterior, PosteriorChain, PredictiveResult,
};
use crate::integrators::{Propagator, Scheme, TaoConfig, Trajectory};
use crate::ls::fit_ls;

const IC_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 1000;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The ground-truth propagator at the data step.
pub fn truth_propagator(cfg: &DataConfig) -> Result<Propagator<CherryHamiltonian>> {
    match cfg.truth {
        TruthSystem::Cherry => Propagator::new(
            CherryHamiltonian,
            Scheme::Tao(TaoConfig::new(cfg.omega, cfg.dt)?),
        ),
    }
}

/// Integrates the truth from each IC, subsamples at the observation stride
/// and corrupts the samples. Training ICs whose clean trajectory diverges
/// are redrawn when `resample_diverged` is set.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    let d = &cfg.data;
    let prop = truth_propagator(d)?;
    let steps = d.data_steps();
    let mean = d.test_ic()?;
    let mut ic_rng = stream_rng(cfg.seed, IC_STREAM);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut trajectories = Vec::with_capacity(d.n_trajectories);
    for m in 0..d.n_trajectories {
        let mut attempts = 0;
        let (ic, clean) = loop {
            attempts += 1;
            let ic = if d.ic_std > 0.0 {
                let x: Vec<f64> = mean
                    .to_vec()
                    .iter()
                    .map(|mu| mu + d.ic_std * normal.sample(&mut ic_rng))
                    .collect();
                PhaseState::from_slice(&x)?
            } else {
                mean.clone()
            };
            let run = prop.propagate_partial(&ic, steps)?;
            match run.diverged_at {
                None => break (ic, run.trajectory),
                Some(step) if !d.resample_diverged || d.ic_std == 0.0 => {
                    return Err(Error::Divergence { step });
                }
                Some(step) if attempts >= d.max_resample_attempts => {
                    log::error!("trajectory {m}: {attempts} ICs diverged, last at step {step}");
                    return Err(Error::Divergence { step });
                }
                Some(_) => continue,
            }
        };

        let noise = NoiseSpec {
            kind: d.noise,
            seed: cfg.seed,
        };
        let mut rng = stream_rng(cfg.seed, NOISE_STREAM + m as u64);
        let mut times = Vec::new();
        let mut observations = Vec::new();
        let mut clean_rows = Vec::new();
        for k in (0..=steps).step_by(d.observation_stride) {
            let x = clean.states[k].to_vec();
            times.push(k as f64 * d.dt);
            observations.push(x.iter().map(|v| noise.perturb(*v, &mut rng)).collect());
            clean_rows.push(x);
        }
        trajectories.push(ObservedTrajectory {
            initial_condition: ic,
            times,
            observations,
            clean: clean_rows,
            noise,
        });
    }
    Ok(TrajectoryDataset { trajectories })
}

/// `‖x̂_{i:j} − x_{i:j}‖_F / ‖x_{i:j}‖_F` over states `i..=j` (index 0 is the IC).
pub fn relative_error(estimate: &Trajectory, truth: &Trajectory, i: usize, j: usize) -> Result<f64> {
    if i == 0 || i > j || j >= truth.len() || j >= estimate.len() {
        return Err(Error::invalid(format!(
            "window {i}..={j} invalid for trajectories of {} and {} states",
            estimate.len(),
            truth.len()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in i..=j {
        let (a, b) = (&estimate.states[k], &truth.states[k]);
        for (x, y) in a.q.iter().chain(&a.p).zip(b.q.iter().chain(&b.p)) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    if den == 0.0 {
        return Err(Error::invalid("truth window has zero norm"));
    }
    Ok((num / den).sqrt())
}

/// Largest `t_k` such that `e(1:m) ≤ threshold` for every `m ≤ k`. An
/// estimate shorter than the truth (a diverged prediction) ends the horizon
/// at its last state.
pub fn error_horizon(estimate: &Trajectory, truth: &Trajectory, threshold: f64) -> Result<f64> {
    let len = estimate.len().min(truth.len());
    let (mut num, mut den) = (0.0, 0.0);
    let mut last_ok = 0;
    for k in 1..len {
        let (a, b) = (&estimate.states[k], &truth.states[k]);
        for (x, y) in a.q.iter().chain(&a.p).zip(b.q.iter().chain(&b.p)) {
            num += (x - y) * (x - y);
            den += y * y;
        }
        if den == 0.0 {
            if num == 0.0 {
                last_ok = k;
                continue;
            }
            break;
        }
        if (num / den).sqrt() > threshold {
            break;
        }
        last_ok = k;
    }
    Ok(last_ok as f64 * truth.dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SingleIcSymplectic,
    SingleIcRk2,
    MultiIcBayes,
    MultiIcLs,
}

impl Mode {
    pub fn is_bayesian(self) -> bool {
        !matches!(self, Mode::MultiIcLs)
    }

    /// Scheme used inside the likelihood.
    pub fn learning_scheme(self, model: &ModelConfig) -> Result<Scheme> {
        Ok(match self {
            Mode::SingleIcRk2 => Scheme::Rk2 { dt: model.learning_dt },
            _ => Scheme::Tao(TaoConfig::new(model.omega, model.learning_dt)?),
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-ic-symplectic" => Ok(Mode::SingleIcSymplectic),
            "single-ic-rk2" => Ok(Mode::SingleIcRk2),
            "multi-ic-bayes" => Ok(Mode::MultiIcBayes),
            "multi-ic-ls" => Ok(Mode::MultiIcLs),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Learned-Hamiltonian values against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianReport {
    pub h_true: f64,
    pub h_learned: f64,
    /// `H̃(x0) − H(x0)`.
    pub error: f64,
    /// `H̃` along the model's own predicted trajectory.
    pub learned_along_trajectory: Vec<f64>,
    /// Per posterior sample: `H̃_i` along its own predicted trajectory.
    pub sample_values: Vec<Vec<f64>>,
}

/// Evaluates each learned model along its own prediction from `x0`, keeping
/// every `stride`-th point. Diverged sample trajectories are reported up to
/// the divergence.
pub fn hamiltonian_error_report<H: Hamiltonian>(
    model: &HamiltonianModel,
    truth: &H,
    x0: &PhaseState,
    scheme: Scheme,
    n_steps: usize,
    stride: usize,
    samples: &[Vec<f64>],
) -> Result<HamiltonianReport> {
    let stride = stride.max(1);
    let series = |m: &HamiltonianModel| -> Result<Vec<f64>> {
        let prop = Propagator::new(m, scheme)?;
        let run = prop.propagate_partial(x0, n_steps)?;
        run.trajectory
            .states
            .iter()
            .step_by(stride)
            .map(|s| m.value_at(s))
            .collect()
    };
    let h_true = truth.value_at(x0)?;
    let h_learned = model.value_at(x0)?;
    let sample_values = samples
        .iter()
        .map(|c| series(&HamiltonianModel::new(model.dictionary().clone(), c.clone())?))
        .collect::<Result<_>>()?;
    Ok(HamiltonianReport {
        h_true,
        h_learned,
        error: h_learned - h_true,
        learned_along_trajectory: series(model)?,
        sample_values,
    })
}

/// Scalar results. Errors of an estimator whose prediction diverged inside
/// a window are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: Mode,
    pub seed: u64,
    /// Errors of the headline estimator: the MAP trajectory for single-IC
    /// modes, the posterior-predictive mean for multi-IC Bayes, LS otherwise.
    pub estimator: String,
    pub train_error: Option<f64>,
    pub test_error: Option<f64>,
    pub horizon_10pct: f64,
    #[serde(rename = "H_learned")]
    pub h_learned: f64,
    #[serde(rename = "H_true")]
    pub h_true: f64,
    pub acceptance_rate: Option<f64>,
    pub diverged_sample_count: Option<usize>,
    pub map_train_error: Option<f64>,
    pub map_test_error: Option<f64>,
    pub map_horizon_10pct: Option<f64>,
    pub mean_train_error: Option<f64>,
    pub mean_test_error: Option<f64>,
    pub mean_horizon_10pct: Option<f64>,
    pub ls_train_error: Option<f64>,
    pub ls_test_error: Option<f64>,
    pub ls_horizon_10pct: Option<f64>,
    pub start_log_posterior: Option<f64>,
    pub map_log_posterior: Option<f64>,
    pub optimizer_evaluations: Option<usize>,
    pub optimizer_converged: Option<bool>,
    pub start_kind: Option<StartKind>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub dataset: TrajectoryDataset,
    pub truth: Trajectory,
    pub ls_model: HamiltonianModel,
    pub ls_trajectory: Trajectory,
    pub map_theta: Option<ParameterVector>,
    pub map_model: Option<HamiltonianModel>,
    pub map_trajectory: Option<Trajectory>,
    pub map_result: Option<MapResult>,
    pub chain: Option<PosteriorChain>,
    pub predictive: Option<PredictiveResult>,
    pub hamiltonian: HamiltonianReport,
    pub metrics: Metrics,
}

struct WindowErrors {
    train: Option<f64>,
    test: Option<f64>,
    horizon: f64,
}

fn window_errors(est: &Trajectory, truth: &Trajectory, p: &PredictionConfig) -> Result<WindowErrors> {
    let n_train = p.train_steps();
    let last = truth.len() - 1;
    let train = relative_error(est, truth, 1, n_train).ok();
    let test_end = (2 * n_train).min(last);
    let test = if n_train < test_end {
        relative_error(est, truth, n_train + 1, test_end).ok()
    } else {
        None
    };
    Ok(WindowErrors {
        train,
        test,
        horizon: error_horizon(est, truth, p.error_threshold)?,
    })
}

/// Dictionary for the configured model.
pub fn model_dictionary(cfg: &ExperimentConfig) -> Result<Arc<BasisDictionary>> {
    Ok(Arc::new(build_dictionary(cfg.model.basis, 4, cfg.model.max_degree)?))
}

/// Skeleton used inside the likelihood for `mode`.
pub fn learning_skeleton(cfg: &ExperimentConfig, mode: Mode) -> Result<ModelSkeleton> {
    ModelSkeleton::new(model_dictionary(cfg)?, mode.learning_scheme(&cfg.model)?)
}

/// Skeleton used for every prediction: Tao at the prediction step.
pub fn prediction_skeleton(cfg: &ExperimentConfig) -> Result<ModelSkeleton> {
    ModelSkeleton::new(
        model_dictionary(cfg)?,
        Scheme::Tao(TaoConfig::new(cfg.model.omega, cfg.prediction.dt)?),
    )
}

/// LS baseline on the configured dictionary.
pub fn ls_fit_on(cfg: &ExperimentConfig, dataset: &TrajectoryDataset) -> Result<HamiltonianModel> {
    fit_ls(&dataset.trajectories, model_dictionary(cfg)?, cfg.ls.regularization)
        .map_err(|e| e.at_stage("ls-fit"))
}

#[derive(Debug, Clone)]
pub struct MapFit {
    pub theta: ParameterVector,
    pub result: MapResult,
    pub start: ParameterVector,
    pub start_kind: StartKind,
}

/// Optimizer start: LS coefficients (or zeros) with the configured
/// variances. An LS start with `−∞` posterior falls back to zeros.
pub fn choose_start(
    cfg: &ExperimentConfig,
    posterior: &Posterior<'_>,
    ls_model: &HamiltonianModel,
) -> Result<(ParameterVector, StartKind)> {
    let zero = ParameterVector::new(
        vec![0.0; ls_model.coefficients().len()],
        cfg.start.theta_sigma,
        cfg.start.theta_gamma,
    )?;
    if cfg.start.coefficients == StartKind::Zero {
        return Ok((zero, StartKind::Zero));
    }
    let ls = ParameterVector::new(
        ls_model.coefficients().to_vec(),
        cfg.start.theta_sigma,
        cfg.start.theta_gamma,
    )?;
    if posterior.log_posterior(&ls)?.is_finite() {
        Ok((ls, StartKind::Ls))
    } else {
        log::warn!("LS start has -inf posterior; starting from zero coefficients");
        Ok((zero, StartKind::Zero))
    }
}

/// MAP estimate for `mode` on `dataset`.
pub fn fit_map_on(
    cfg: &ExperimentConfig,
    mode: Mode,
    dataset: &TrajectoryDataset,
    ls_model: &HamiltonianModel,
) -> Result<MapFit> {
    let skeleton = learning_skeleton(cfg, mode)?;
    let posterior = Posterior::new(&dataset.trajectories, cfg.prior, &skeleton, cfg.ukf)?;
    let (start, start_kind) = choose_start(cfg, &posterior, ls_model)?;
    let (theta, result) =
        find_map(&start, &posterior, &cfg.optimizer).map_err(|e| e.at_stage("fit-map"))?;
    log::info!(
        "MAP: log posterior {:.6} -> {:.6} in {} evaluations",
        result.start_log_density,
        result.log_density,
        result.evaluations
    );
    Ok(MapFit {
        theta,
        result,
        start,
        start_kind,
    })
}

/// DRAM chain for `mode` on `dataset`, started at `init`.
pub fn sample_on(
    cfg: &ExperimentConfig,
    mode: Mode,
    dataset: &TrajectoryDataset,
    init: &ParameterVector,
) -> Result<PosteriorChain> {
    let skeleton = learning_skeleton(cfg, mode)?;
    let posterior = Posterior::new(&dataset.trajectories, cfg.prior, &skeleton, cfg.ukf)?;
    let mcmc = cfg.mcmc.to_mcmc(skeleton.n_coefficients(), cfg.seed);
    dram_sample(&posterior, &init.to_flat(), &mcmc).map_err(|e| e.at_stage("sample"))
}

/// Runs one mode end to end. Stage failures are labelled with the stage name.
pub fn run_experiment(cfg: &ExperimentConfig, mode: Mode) -> Result<ExperimentResult> {
    cfg.validate()?;
    let dataset = generate_data(cfg).map_err(|e| e.at_stage("generate"))?;
    run_on_dataset(cfg, mode, dataset)
}

/// As [`run_experiment`] but on existing data.
pub fn run_on_dataset(
    cfg: &ExperimentConfig,
    mode: Mode,
    dataset: TrajectoryDataset,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let p = &cfg.prediction;
    let x0 = cfg.data.test_ic()?;
    let n_pred = p.steps();
    let predict_skeleton = prediction_skeleton(cfg)?;
    let predict_scheme = predict_skeleton.scheme;
    let n_coef = predict_skeleton.n_coefficients();

    let truth_prop = Propagator::new(
        CherryHamiltonian,
        Scheme::Tao(TaoConfig::new(cfg.data.omega, p.dt)?),
    )?;
    let truth = truth_prop
        .propagate(&x0, n_pred)
        .map_err(|e| e.at_stage("truth"))?;

    let ls_model = ls_fit_on(cfg, &dataset)?;
    let ls_theta = ParameterVector::new(
        ls_model.coefficients().to_vec(),
        cfg.start.theta_sigma,
        cfg.start.theta_gamma,
    )?;
    let ls_trajectory = map_trajectory(&ls_theta, &predict_skeleton, &x0, n_pred)?.trajectory;
    let ls_err = window_errors(&ls_trajectory, &truth, p)?;

    let mut metrics = Metrics {
        mode,
        seed: cfg.seed,
        estimator: "ls".into(),
        train_error: ls_err.train,
        test_error: ls_err.test,
        horizon_10pct: ls_err.horizon,
        h_learned: ls_model.value_at(&x0)?,
        h_true: CherryHamiltonian.value_at(&x0)?,
        acceptance_rate: None,
        diverged_sample_count: None,
        map_train_error: None,
        map_test_error: None,
        map_horizon_10pct: None,
        mean_train_error: None,
        mean_test_error: None,
        mean_horizon_10pct: None,
        ls_train_error: ls_err.train,
        ls_test_error: ls_err.test,
        ls_horizon_10pct: Some(ls_err.horizon),
        start_log_posterior: None,
        map_log_posterior: None,
        optimizer_evaluations: None,
        optimizer_converged: None,
        start_kind: None,
    };

    if !mode.is_bayesian() {
        let hamiltonian =
            hamiltonian_error_report(&ls_model, &CherryHamiltonian, &x0, predict_scheme, n_pred, 10, &[])?;
        return Ok(ExperimentResult {
            mode,
            config: cfg.clone(),
            dataset,
            truth,
            ls_model,
            ls_trajectory,
            map_theta: None,
            map_model: None,
            map_trajectory: None,
            map_result: None,
            chain: None,
            predictive: None,
            hamiltonian,
            metrics,
        });
    }

    let fit = fit_map_on(cfg, mode, &dataset, &ls_model)?;
    let chain = sample_on(cfg, mode, &dataset, &fit.theta)?;
    let (map_result, start_kind) = (fit.result, fit.start_kind);
    let map_theta = if chain.map_log_post > map_result.log_density {
        ParameterVector::from_flat(&chain.map_point)?
    } else {
        fit.theta
    };
    let map_model = predict_skeleton.model(&map_theta.theta_psi)?;
    let map_traj = map_trajectory(&map_theta, &predict_skeleton, &x0, n_pred)?.trajectory;
    let map_err = window_errors(&map_traj, &truth, p)?;

    let predictive = posterior_predictive_mean(&chain, &predict_skeleton, &x0, n_pred, p.thin)
        .map_err(|e| e.at_stage("predict"))?;
    let mean_err = window_errors(&predictive.mean, &truth, p)?;

    let thinned: Vec<Vec<f64>> = predictive
        .sample_indices
        .iter()
        .map(|&i| chain.retained()[i][..n_coef].to_vec())
        .collect();
    let hamiltonian = hamiltonian_error_report(
        &map_model,
        &CherryHamiltonian,
        &x0,
        predict_scheme,
        n_pred,
        10,
        &thinned,
    )?;

    let headline = if mode == Mode::MultiIcBayes {
        metrics.estimator = "posterior-mean".into();
        &mean_err
    } else {
        metrics.estimator = "map".into();
        &map_err
    };
    metrics.train_error = headline.train;
    metrics.test_error = headline.test;
    metrics.horizon_10pct = headline.horizon;
    metrics.h_learned = hamiltonian.h_learned;
    metrics.acceptance_rate = Some(chain.acceptance_rate);
    metrics.diverged_sample_count = Some(predictive.diverged);
    metrics.map_train_error = map_err.train;
    metrics.map_test_error = map_err.test;
    metrics.map_horizon_10pct = Some(map_err.horizon);
    metrics.mean_train_error = mean_err.train;
    metrics.mean_test_error = mean_err.test;
    metrics.mean_horizon_10pct = Some(mean_err.horizon);
    metrics.start_log_posterior = Some(map_result.start_log_density);
    metrics.map_log_posterior = Some(chain.map_log_post.max(map_result.log_density));
    metrics.optimizer_evaluations = Some(map_result.evaluations);
    metrics.optimizer_converged = Some(map_result.converged);
    metrics.start_kind = Some(start_kind);

    Ok(ExperimentResult {
        mode,
        config: cfg.clone(),
        dataset,
        truth,
        ls_model,
        ls_trajectory,
        map_theta: Some(map_theta),
        map_model: Some(map_model),
        map_trajectory: Some(map_traj),
        map_result: Some(map_result),
        chain: Some(chain),
        predictive: Some(predictive),
        hamiltonian,
        metrics,
    })
}

impl ExperimentResult {
    /// Writes the bundle: `metrics.json`, `config.toml`, `data/`, trajectory
    /// CSVs, model JSONs, `chain.csv` with `chain.json`, `hamiltonian.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&self.metrics)?)?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml_string()?)?;
        self.dataset.save(&dir.join("data"))?;
        self.truth.save_csv(&dir.join("truth.csv"))?;
        self.ls_trajectory.save_csv(&dir.join("ls_trajectory.csv"))?;
        std::fs::write(dir.join("model_ls.json"), self.ls_model.to_json()?)?;
        std::fs::write(
            dir.join("hamiltonian.json"),
            serde_json::to_string_pretty(&self.hamiltonian)?,
        )?;
        if let (Some(model), Some(theta)) = (&self.map_model, &self.map_theta) {
            std::fs::write(dir.join("model_map.json"), model.to_json()?)?;
            std::fs::write(dir.join("theta_map.json"), serde_json::to_string_pretty(theta)?)?;
        }
        if let Some(t) = &self.map_trajectory {
            t.save_csv(&dir.join("map_trajectory.csv"))?;
        }
        if let Some(pred) = &self.predictive {
            pred.mean.save_csv(&dir.join("mean_trajectory.csv"))?;
            let ens = dir.join("ensemble");
            std::fs::create_dir_all(&ens)?;
            for (t, i) in pred.ensemble.iter().zip(&pred.sample_indices) {
                t.save_csv(&ens.join(format!("sample_{i}.csv")))?;
            }
        }
        if let Some(chain) = &self.chain {
            let dict = self.ls_model.dictionary();
            let mut names: Vec<String> = (0..dict.len()).map(|i| dict.term_name(i)).collect();
            names.push("log_theta_sigma".into());
            names.push("log_theta_gamma".into());
            chain.save_csv(&dir.join("chain.csv"), &names)?;
            let mcmc = self.config.mcmc.to_mcmc(dict.len(), self.config.seed);
            std::fs::write(
                dir.join("chain.json"),
                serde_json::to_string_pretty(&ChainSidecar::new(chain, &mcmc))?,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NoiseKind;

    fn straight(values: &[f64], dt: f64) -> Trajectory {
        Trajectory {
            dt,
            states: values
                .iter()
                .map(|v| PhaseState::new(vec![*v], vec![0.0]).unwrap())
                .collect(),
        }
    }

    #[test]
    fn relative_error_trivial_cases() {
        let t = straight(&[1.0, 2.0, 3.0, 4.0], 0.1);
        assert_eq!(relative_error(&t, &t, 1, 3).unwrap(), 0.0);
        let double = straight(&[2.0, 4.0, 6.0, 8.0], 0.1);
        assert!((relative_error(&double, &t, 1, 3).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_error(&t, &t, 0, 3).is_err());
        let zero = straight(&[0.0, 0.0, 0.0], 0.1);
        assert!(relative_error(&zero, &zero, 1, 2).is_err());
    }

    #[test]
    fn horizon_cases() {
        let t = straight(&[1.0, 1.0, 1.0, 1.0, 1.0], 0.5);
        assert_eq!(error_horizon(&t, &t, 0.1).unwrap(), 2.0);
        let off = straight(&[1.0, 1.5, 1.0, 1.0, 1.0], 0.5);
        assert_eq!(error_horizon(&off, &t, 0.1).unwrap(), 0.0);
        // e(1:1)=0, e(1:2)=0.05/sqrt2, e(1:3)=sqrt(0.0025+0.09)/sqrt3 > 0.1
        let late = straight(&[1.0, 1.0, 1.05, 1.3, 1.0], 0.5);
        assert_eq!(error_horizon(&late, &t, 0.1).unwrap(), 1.0);
        let short = straight(&[1.0, 1.0, 1.0], 0.5);
        assert_eq!(error_horizon(&short, &t, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn single_ic_data_shape() {
        let cfg = ExperimentConfig::single_ic();
        let data = generate_data(&cfg).unwrap();
        assert_eq!(data.len(), 1);
        let tr = &data.trajectories[0];
        assert_eq!(tr.observations.len(), 21);
        assert!((tr.spacing().unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(tr.initial_condition.to_vec(), TEST_IC.to_vec());
    }

    #[test]
    fn noiseless_data_is_subsampled_truth() {
        let mut cfg = ExperimentConfig::single_ic();
        cfg.data.noise = NoiseKind::AdditiveGaussian(0.0);
        let data = generate_data(&cfg).unwrap();
        let truth = truth_propagator(&cfg.data)
            .unwrap()
            .propagate(&cfg.data.test_ic().unwrap(), 800)
            .unwrap();
        let tr = &data.trajectories[0];
        for (k, row) in tr.observations.iter().enumerate() {
            assert_eq!(row, &truth.states[40 * k].to_vec());
        }
    }

    #[test]
    fn relative_noise_bound_in_data() {
        let cfg = ExperimentConfig::multi_ic();
        let data = generate_data(&cfg).unwrap();
        assert_eq!(data.len(), 5);
        for tr in &data.trajectories {
            for (y, x) in tr.observations.iter().zip(&tr.clean) {
                for (a, b) in y.iter().zip(x) {
                    assert!((a - b).abs() <= 0.1 * b.abs() + 1e-15);
                }
            }
        }
    }

    #[test]
    fn data_is_deterministic() {
        let cfg = ExperimentConfig::multi_ic();
        assert_eq!(generate_data(&cfg).unwrap(), generate_data(&cfg).unwrap());
        let other = ExperimentConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_data(&cfg).unwrap(), generate_data(&other).unwrap());
    }

    #[test]
    fn truth_model_report_is_exact() {
        let dict = Arc::new(build_dictionary(crate::hamiltonian::BasisKind::Monomial, 4, 3).unwrap());
        let coeffs = crate::hamiltonian::cherry_coefficients(&dict).unwrap();
        let model = HamiltonianModel::new(dict, coeffs.clone()).unwrap();
        let x0 = PhaseState::from_slice(&TEST_IC).unwrap();
        let scheme = Scheme::Tao(TaoConfig::new(10.0, 0.01).unwrap());
        let r = hamiltonian_error_report(&model, &CherryHamiltonian, &x0, scheme, 100, 10, &[coeffs])
            .unwrap();
        assert!(r.error.abs() < 1e-15);
        assert_eq!(r.learned_along_trajectory.len(), 11);
        assert_eq!(r.sample_values.len(), 1);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("multi-ic-ls".parse::<Mode>().unwrap(), Mode::MultiIcLs);
        assert!("other".parse::<Mode>().is_err());
    }
}
