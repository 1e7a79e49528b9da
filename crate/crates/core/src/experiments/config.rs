//! Experiment configuration, loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::NoiseKind;
use crate::error::{Error, Result};
use crate::filter::UkfConfig;
use crate::hamiltonian::{BasisKind, PhaseState};
use crate::inference::{McmcConfig, OptimizerSettings, PriorSpec, ProposalInit, SecondStageScaling};

pub const TEST_IC: [f64; 4] = [0.15, 0.1, -0.05, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthSystem {
    #[default]
    Cherry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub truth: TruthSystem,
    /// Step of the ground-truth integration.
    pub dt: f64,
    /// Binding constant of the ground-truth integrator.
    pub omega: f64,
    /// Observation spacing in data steps.
    pub observation_stride: usize,
    pub horizon: f64,
    pub n_trajectories: usize,
    /// Test IC; training ICs are drawn around it when `ic_std > 0`.
    pub ic_mean: Vec<f64>,
    pub ic_std: f64,
    pub resample_diverged: bool,
    pub max_resample_attempts: usize,
    pub noise: NoiseKind,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            truth: TruthSystem::Cherry,
            dt: 0.01,
            omega: 10.0,
            observation_stride: 40,
            horizon: 8.0,
            n_trajectories: 1,
            ic_mean: TEST_IC.to_vec(),
            ic_std: 0.0,
            resample_diverged: true,
            max_resample_attempts: 100,
            noise: NoiseKind::AdditiveGaussian(0.01),
        }
    }
}

impl DataConfig {
    pub fn data_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn observation_spacing(&self) -> f64 {
        self.observation_stride as f64 * self.dt
    }

    pub fn test_ic(&self) -> Result<PhaseState> {
        PhaseState::from_slice(&self.ic_mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub basis: BasisKind,
    pub max_degree: usize,
    /// Integrator step inside the likelihood.
    pub learning_dt: f64,
    pub omega: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            basis: BasisKind::Monomial,
            max_degree: 3,
            learning_dt: 0.05,
            omega: 10.0,
        }
    }
}

/// Sampler settings as written in a config file; turned into a
/// [`McmcConfig`] once the parameter dimension and seed are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_samples: usize,
    /// Defaults to half the chain.
    pub burn_in: Option<usize>,
    pub adapt_start: usize,
    pub dr_scale: f64,
    pub second_stage: SecondStageScaling,
    pub jitter: f64,
    /// Initial proposal variance of each dictionary coefficient.
    pub init_coefficient_var: f64,
    /// Initial proposal variance of each log-variance.
    pub init_log_variance_var: f64,
    pub adapt: bool,
    pub delayed_rejection: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            burn_in: None,
            adapt_start: 200,
            dr_scale: 0.01,
            second_stage: SecondStageScaling::Covariance,
            jitter: 1e-10,
            init_coefficient_var: 1e-4,
            init_log_variance_var: 1e-2,
            adapt: true,
            delayed_rejection: true,
        }
    }
}

impl SamplerConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_samples / 2)
    }

    pub fn to_mcmc(&self, n_coefficients: usize, seed: u64) -> McmcConfig {
        let mut diag = vec![self.init_coefficient_var; n_coefficients];
        diag.extend([self.init_log_variance_var; 2]);
        McmcConfig {
            n_samples: self.n_samples,
            burn_in: self.burn_in(),
            adapt_start: self.adapt_start,
            dr_scale: self.dr_scale,
            second_stage: self.second_stage,
            jitter: self.jitter,
            init_proposal_cov: ProposalInit::Diagonal(diag),
            rng_seed: seed,
            adapt: self.adapt,
            delayed_rejection: self.delayed_rejection,
            adapt_scale: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    /// Coefficients from the least-squares baseline.
    Ls,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartConfig {
    pub coefficients: StartKind,
    pub theta_sigma: f64,
    pub theta_gamma: f64,
}

impl Default for StartConfig {
    fn default() -> Self {
        Self {
            coefficients: StartKind::Ls,
            theta_sigma: 1e-6,
            theta_gamma: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    pub dt: f64,
    pub horizon: f64,
    /// End of the training window; errors are split there.
    pub train_end: f64,
    pub thin: usize,
    pub error_threshold: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 16.0,
            train_end: 8.0,
            thin: 200,
            error_threshold: 0.1,
        }
    }
}

impl PredictionConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn train_steps(&self) -> usize {
        (self.train_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LsConfig {
    pub regularization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub ukf: UkfConfig,
    pub prior: PriorSpec,
    pub optimizer: OptimizerSettings,
    pub mcmc: SamplerConfig,
    pub start: StartConfig,
    pub prediction: PredictionConfig,
    pub ls: LsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::single_ic()
    }
}

impl ExperimentConfig {
    /// One trajectory from the test IC with Gaussian noise, monomial basis,
    /// learning step 0.05, 2e4 samples.
    pub fn single_ic() -> Self {
        Self {
            name: "single-ic".into(),
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            ukf: UkfConfig::default(),
            prior: PriorSpec::default(),
            optimizer: OptimizerSettings::default(),
            mcmc: SamplerConfig::default(),
            start: StartConfig::default(),
            prediction: PredictionConfig::default(),
            ls: LsConfig::default(),
        }
    }

    /// Five ICs around the test IC with 10% relative noise, Legendre basis,
    /// learning step 0.01, 1e4 samples, every 200th kept for prediction.
    pub fn multi_ic() -> Self {
        Self {
            name: "multi-ic".into(),
            data: DataConfig {
                n_trajectories: 5,
                ic_std: 0.05,
                noise: NoiseKind::RelativeUniform(0.10),
                ..DataConfig::default()
            },
            model: ModelConfig {
                basis: BasisKind::Legendre,
                learning_dt: 0.01,
                ..ModelConfig::default()
            },
            mcmc: SamplerConfig {
                n_samples: 10_000,
                burn_in: Some(0),
                ..SamplerConfig::default()
            },
            prediction: PredictionConfig {
                horizon: 25.0,
                ..PredictionConfig::default()
            },
            ..Self::single_ic()
        }
    }

    /// Long-run sample counts: 2e5 with 1e5 burn-in for a
    /// single IC; the multi-IC count is unchanged.
    pub fn with_full_scale(mut self) -> Self {
        if self.data.n_trajectories == 1 {
            self.mcmc.n_samples = 200_000;
            self.mcmc.burn_in = Some(100_000);
        }
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let d = &self.data;
        if !(d.dt > 0.0 && d.horizon > 0.0) {
            return bad("data.dt and data.horizon must be positive".into());
        }
        if !is_multiple(d.horizon, d.dt) {
            return bad(format!("data.horizon {} is not a multiple of data.dt {}", d.horizon, d.dt));
        }
        if d.observation_stride == 0 || !d.data_steps().is_multiple_of(d.observation_stride) {
            return bad("data.observation_stride must divide the number of data steps".into());
        }
        if d.n_trajectories == 0 {
            return bad("data.n_trajectories must be positive".into());
        }
        if d.ic_mean.len() != 4 {
            return bad(format!("data.ic_mean must have 4 entries, got {}", d.ic_mean.len()));
        }
        if !(d.ic_std >= 0.0 && d.omega > 0.0) {
            return bad("data.ic_std must be >= 0 and data.omega > 0".into());
        }
        crate::dataset::NoiseSpec { kind: d.noise, seed: 0 }
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;

        let m = &self.model;
        if !(m.learning_dt > 0.0 && m.omega > 0.0) || m.max_degree == 0 {
            return bad("model.learning_dt, model.omega and model.max_degree must be positive".into());
        }
        // the learning step must divide the observation spacing
        if !is_multiple(d.observation_spacing(), m.learning_dt) {
            return bad(format!(
                "model.learning_dt {} must divide the observation spacing {}",
                m.learning_dt,
                d.observation_spacing()
            ));
        }
        self.ukf.validate(4).map_err(|e| Error::Config(e.to_string()))?;
        self.prior.validate().map_err(|e| Error::Config(e.to_string()))?;

        let s = &self.mcmc;
        if s.n_samples == 0 || s.burn_in() >= s.n_samples {
            return bad("mcmc.burn_in must be smaller than mcmc.n_samples".into());
        }
        if !(s.dr_scale > 0.0 && s.dr_scale < 1.0 && s.jitter > 0.0) {
            return bad("mcmc.dr_scale must be in (0, 1) and mcmc.jitter positive".into());
        }
        if !(s.init_coefficient_var > 0.0 && s.init_log_variance_var > 0.0) {
            return bad("initial proposal variances must be positive".into());
        }
        if !(self.start.theta_sigma > 0.0 && self.start.theta_gamma > 0.0) {
            return bad("start variances must be positive".into());
        }

        let p = &self.prediction;
        if !(p.dt > 0.0 && p.horizon > 0.0 && p.train_end > 0.0 && p.train_end <= p.horizon) {
            return bad("prediction dt, horizon and train_end must be positive with train_end <= horizon".into());
        }
        if !is_multiple(p.horizon, p.dt) || !is_multiple(p.train_end, p.dt) {
            return bad("prediction.horizon and prediction.train_end must be multiples of prediction.dt".into());
        }
        if p.thin == 0 || !(p.error_threshold > 0.0) {
            return bad("prediction.thin and prediction.error_threshold must be positive".into());
        }
        if !(self.ls.regularization >= 0.0) {
            return bad("ls.regularization must be nonnegative".into());
        }
        Ok(())
    }
}

fn is_multiple(x: f64, step: f64) -> bool {
    let r = x / step;
    r.round() >= 1.0 && (r - r.round()).abs() <= 1e-6 * r.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::single_ic().validate().unwrap();
        ExperimentConfig::multi_ic().validate().unwrap();
        ExperimentConfig::single_ic().with_full_scale().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::multi_ic();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 7\n[data]\nnoise = { kind = \"relative-uniform\", level = 0.1 }\n[mcmc]\nn_samples = 100\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data.noise, NoiseKind::RelativeUniform(0.1));
        assert_eq!(cfg.mcmc.burn_in(), 50);
        assert_eq!(cfg.model.learning_dt, 0.05);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("[model]\nlearning_dt = 0.03\n"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml_str("[mcmc]\nn_samples = 10\nburn_in = 10\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[data]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("seed = \"x\"").is_err());
    }

    #[test]
    fn full_scale_counts() {
        let d = DataConfig::default();
        assert_eq!(d.data_steps() / d.observation_stride + 1, 21);
        assert!((d.observation_spacing() - 0.4).abs() < 1e-12);
        let p = ExperimentConfig::single_ic().with_full_scale();
        assert_eq!((p.mcmc.n_samples, p.mcmc.burn_in()), (200_000, 100_000));
    }
}
