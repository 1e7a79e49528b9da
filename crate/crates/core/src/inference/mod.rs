//! Posterior over dictionary coefficients and noise variances, with MAP
//! optimization, DRAM sampling and posterior-predictive estimators.
//!
//! Noise variances are carried as logarithms; the prior is evaluated on the
//! positive scale and corrected by the Jacobian `θ = exp(u)`.

mod dram;
mod optimize;
mod predictive;

pub use dram::{
    dram_sample, first_stage_log_ratio, ChainSidecar, McmcConfig, PosteriorChain, ProposalInit,
    SecondStageScaling,
};
pub use optimize::{maximize, MapResult, OptimizerSettings};
pub use predictive::{map_trajectory, posterior_predictive_mean, thinned_indices, PredictiveResult};

use serde::{Deserialize, Serialize};

use crate::dataset::ObservedTrajectory;
use crate::error::{Error, Result};
use crate::filter::{multi_trajectory_log_likelihood, ModelSkeleton, NoiseParams, UkfConfig};

/// Full parameter `(θ_Ψ, log θ_Σ, log θ_Γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub theta_psi: Vec<f64>,
    pub log_theta_sigma: f64,
    pub log_theta_gamma: f64,
}

impl ParameterVector {
    pub fn new(theta_psi: Vec<f64>, theta_sigma: f64, theta_gamma: f64) -> Result<Self> {
        if !(theta_sigma > 0.0 && theta_gamma > 0.0) {
            return Err(Error::invalid("noise variances must be positive"));
        }
        Ok(Self {
            theta_psi,
            log_theta_sigma: theta_sigma.ln(),
            log_theta_gamma: theta_gamma.ln(),
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_psi.len() + 2
    }

    pub fn theta_sigma(&self) -> f64 {
        self.log_theta_sigma.exp()
    }

    pub fn theta_gamma(&self) -> f64 {
        self.log_theta_gamma.exp()
    }

    pub fn noise(&self) -> NoiseParams {
        NoiseParams {
            theta_sigma: self.theta_sigma(),
            theta_gamma: self.theta_gamma(),
        }
    }

    /// `[θ_Ψ..., log θ_Σ, log θ_Γ]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.theta_psi.clone();
        v.push(self.log_theta_sigma);
        v.push(self.log_theta_gamma);
        v
    }

    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if x.len() < 3 {
            return Err(Error::invalid("flat parameter vector needs at least 3 entries"));
        }
        let n = x.len() - 2;
        Ok(Self {
            theta_psi: x[..n].to_vec(),
            log_theta_sigma: x[n],
            log_theta_gamma: x[n + 1],
        })
    }

    /// Column names for chain files: dictionary terms then the two log-variances.
    pub fn names(skeleton: &ModelSkeleton) -> Vec<String> {
        let dict = &skeleton.dictionary;
        let mut names: Vec<String> = (0..dict.len()).map(|i| dict.term_name(i)).collect();
        names.push("log_theta_sigma".into());
        names.push("log_theta_gamma".into());
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    /// Laplace scale `b` for every dictionary coefficient.
    pub laplace_scale: f64,
    pub halfnormal_scale_sigma: f64,
    pub halfnormal_scale_gamma: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            laplace_scale: 1.0,
            halfnormal_scale_sigma: 1.0,
            halfnormal_scale_gamma: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = [
            self.laplace_scale,
            self.halfnormal_scale_sigma,
            self.halfnormal_scale_gamma,
        ]
        .iter()
        .all(|s| *s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("prior scales must be positive"))
        }
    }
}

pub fn laplace_log_density(x: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - x.abs() / scale
}

pub fn half_normal_log_density(x: f64, scale: f64) -> f64 {
    0.5 * (2.0 / std::f64::consts::PI).ln() - scale.ln() - x * x / (2.0 * scale * scale)
}

/// Log-prior in the sampled coordinates (log-variances include the Jacobian).
pub fn log_prior(theta: &ParameterVector, prior: &PriorSpec) -> f64 {
    let laplace: f64 = theta
        .theta_psi
        .iter()
        .map(|&c| laplace_log_density(c, prior.laplace_scale))
        .sum();
    let sigma = theta.theta_sigma();
    let gamma = theta.theta_gamma();
    laplace
        + half_normal_log_density(sigma, prior.halfnormal_scale_sigma)
        + theta.log_theta_sigma
        + half_normal_log_density(gamma, prior.halfnormal_scale_gamma)
        + theta.log_theta_gamma
}

/// Unnormalized log-density over a flat real vector.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// Must return `−∞` (never NaN) outside the support.
    fn log_density(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> LogDensity for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.1)(x)
    }
}

/// Everything needed to evaluate `log π(θ | data)` up to a constant.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a> {
    pub data: &'a [ObservedTrajectory],
    pub prior: PriorSpec,
    pub skeleton: &'a ModelSkeleton,
    pub ukf: UkfConfig,
}

impl<'a> Posterior<'a> {
    pub fn new(
        data: &'a [ObservedTrajectory],
        prior: PriorSpec,
        skeleton: &'a ModelSkeleton,
        ukf: UkfConfig,
    ) -> Result<Self> {
        prior.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("posterior needs at least one trajectory"));
        }
        for d in data {
            d.validate()?;
            if let Some(h) = d.spacing() {
                skeleton.transitions_per_observation(h)?;
            }
        }
        Ok(Self {
            data,
            prior,
            skeleton,
            ukf,
        })
    }

    pub fn log_posterior(&self, theta: &ParameterVector) -> Result<f64> {
        log_posterior(theta, self.data, &self.prior, self.skeleton, &self.ukf)
    }
}

impl LogDensity for Posterior<'_> {
    fn dim(&self) -> usize {
        self.skeleton.n_coefficients() + 2
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match ParameterVector::from_flat(x).and_then(|t| self.log_posterior(&t)) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// `log L(θ; data) + log π(θ)`.
pub fn log_posterior(
    theta: &ParameterVector,
    data: &[ObservedTrajectory],
    prior: &PriorSpec,
    skeleton: &ModelSkeleton,
    cfg: &UkfConfig,
) -> Result<f64> {
    if theta.theta_psi.len() != skeleton.n_coefficients() {
        return Err(Error::DimensionMismatch {
            expected: skeleton.n_coefficients(),
            got: theta.theta_psi.len(),
        });
    }
    if !(theta.log_theta_sigma.is_finite() && theta.log_theta_gamma.is_finite()) {
        return Ok(f64::NEG_INFINITY);
    }
    let ll = multi_trajectory_log_likelihood(data, theta, skeleton, cfg)?;
    if ll == f64::NEG_INFINITY {
        return Ok(ll);
    }
    Ok(ll + log_prior(theta, prior))
}

/// Maximizes the posterior from `start`.
pub fn find_map(
    start: &ParameterVector,
    posterior: &Posterior<'_>,
    settings: &OptimizerSettings,
) -> Result<(ParameterVector, MapResult)> {
    let result = maximize(posterior, &start.to_flat(), settings)?;
    Ok((ParameterVector::from_flat(&result.point)?, result))
}
