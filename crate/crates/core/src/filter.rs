//! Unscented Kalman filtering of the stochastic state-space model
//!
//! ```text
//! x_{k+1} = Ψ(x_k) + ξ_k,   ξ_k ~ N(0, θ_Σ I)
//! y_k     = h(x_k) + η_k,   η_k ~ N(0, θ_Γ I)
//! ```
//!
//! and the resulting marginal log-likelihood `Σ_k log N(y_k; ŷ_k, S_k)`.
//!
//! Invalid evaluations (diverged sigma points, factorization failures) are
//! reported as a log-likelihood of `−∞` so that samplers simply reject.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dataset::ObservedTrajectory;
use crate::error::{Error, Result};
use crate::hamiltonian::{BasisDictionary, Hamiltonian, HamiltonianModel};
use crate::inference::ParameterVector;
use crate::integrators::{Propagator, Scheme};

/// Diagonal jitter added when a Cholesky factorization fails once.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cov.nrows(),
            });
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: &[f64], variance: f64) -> Self {
        let n = mean.len();
        Self {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::from_diagonal_element(n, n, variance),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Scalar covariance parameters: `Σ = θ_Σ I`, `Γ = θ_Γ I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub theta_sigma: f64,
    pub theta_gamma: f64,
}

impl NoiseParams {
    pub fn new(theta_sigma: f64, theta_gamma: f64) -> Result<Self> {
        if !(theta_sigma >= 0.0 && theta_gamma >= 0.0) {
            return Err(Error::invalid("noise variances must be nonnegative"));
        }
        Ok(Self {
            theta_sigma,
            theta_gamma,
        })
    }
}

/// Sigma-point spread parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UkfConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            kappa: 0.0,
        }
    }
}

impl UkfConfig {
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa) - n as f64
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if n as f64 + self.lambda(n) <= 0.0 {
            return Err(Error::invalid("n + lambda must be positive"));
        }
        Ok(())
    }

    /// `(mean weights, covariance weights)` for a state of dimension `n`.
    pub fn weights(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let lambda = self.lambda(n);
        let c = n as f64 + lambda;
        let mut wm = vec![0.5 / c; 2 * n + 1];
        let mut wc = wm.clone();
        wm[0] = lambda / c;
        wc[0] = lambda / c + 1.0 - self.alpha * self.alpha + self.beta;
        (wm, wc)
    }
}

/// One application of the state propagator on a stacked state vector.
pub trait StateTransition: Sync {
    fn state_dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

impl<H: Hamiltonian> StateTransition for Propagator<H> {
    fn state_dim(&self) -> usize {
        Propagator::state_dim(self)
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.step_into(x, out)
    }
}

/// Map from state to measured output.
pub trait ObservationModel: Sync {
    fn output_dim(&self, state_dim: usize) -> usize;
    fn observe(&self, x: &[f64], out: &mut [f64]);
}

/// Full-state measurement, `h(x) = x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityObservation;

impl ObservationModel for IdentityObservation {
    fn output_dim(&self, state_dim: usize) -> usize {
        state_dim
    }

    fn observe(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    pub weights_mean: Vec<f64>,
    pub weights_cov: Vec<f64>,
}

fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let n = m.nrows();
    Cholesky::new(m + DMatrix::from_diagonal_element(n, n, JITTER))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric sigma set `{m, m ± col_i(chol((n+λ)P))}`.
pub fn sigma_points(belief: &GaussianBelief, cfg: &UkfConfig) -> Result<SigmaPoints> {
    let n = belief.dim();
    cfg.validate(n)?;
    let scale = n as f64 + cfg.lambda(n);
    let chol = cholesky_with_jitter(&(&belief.cov * scale))
        .ok_or(Error::LikelihoodInvalid("covariance not positive definite"))?;
    let l = chol.l();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(belief.mean.clone());
    for i in 0..n {
        points.push(&belief.mean + l.column(i));
    }
    for i in 0..n {
        points.push(&belief.mean - l.column(i));
    }
    let (weights_mean, weights_cov) = cfg.weights(n);
    Ok(SigmaPoints {
        points,
        weights_mean,
        weights_cov,
    })
}

/// Unscented prediction through one transition, plus `θ_Σ I`.
pub fn predict(
    belief: &GaussianBelief,
    transition: &dyn StateTransition,
    theta_sigma: f64,
    cfg: &UkfConfig,
) -> Result<GaussianBelief> {
    let n = belief.dim();
    cfg.validate(n)?;
    let scale = n as f64 + cfg.lambda(n);
    let chol = cholesky_with_jitter(&(&belief.cov * scale))
        .ok_or(Error::LikelihoodInvalid("covariance not positive definite"))?;
    let l = chol.l();
    let (wm, wc) = cfg.weights(n);
    let count = 2 * n + 1;
    let mut ys = DMatrix::zeros(n, count);
    let mut x = vec![0.0; n];
    for i in 0..count {
        if i == 0 && wm[0] == 0.0 && wc[0] == 0.0 {
            continue;
        }
        for r in 0..n {
            x[r] = match i {
                0 => belief.mean[r],
                i if i <= n => belief.mean[r] + l[(r, i - 1)],
                i => belief.mean[r] - l[(r, i - 1 - n)],
            };
        }
        transition
            .apply(&x, &mut ys.as_mut_slice()[i * n..(i + 1) * n])
            .map_err(|_| Error::LikelihoodInvalid("sigma point diverged"))?;
    }
    let mut mean = DVector::zeros(n);
    for (i, w) in wm.iter().enumerate() {
        if *w != 0.0 {
            mean.axpy(*w, &ys.column(i), 1.0);
        }
    }
    let mut cov = DMatrix::from_diagonal_element(n, n, theta_sigma);
    let mut dev = DVector::zeros(n);
    for (i, w) in wc.iter().enumerate() {
        if *w != 0.0 {
            dev.copy_from(&ys.column(i));
            dev -= &mean;
            cov.ger(*w, &dev, &dev, 1.0);
        }
    }
    symmetrize(&mut cov);
    if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
        return Err(Error::LikelihoodInvalid("non-finite predicted moments"));
    }
    Ok(GaussianBelief { mean, cov })
}

/// Unscented measurement update. Returns the posterior belief and
/// `log N(y; ŷ, S)`.
pub fn update(
    belief: &GaussianBelief,
    y: &[f64],
    obs: &dyn ObservationModel,
    theta_gamma: f64,
    cfg: &UkfConfig,
) -> Result<(GaussianBelief, f64)> {
    update_detailed(belief, y, obs, theta_gamma, cfg).map(|(b, ll, _)| (b, ll))
}

fn update_detailed(
    belief: &GaussianBelief,
    y: &[f64],
    obs: &dyn ObservationModel,
    theta_gamma: f64,
    cfg: &UkfConfig,
) -> Result<(GaussianBelief, f64, DVector<f64>)> {
    let n = belief.dim();
    let dy = obs.output_dim(n);
    if y.len() != dy {
        return Err(Error::DimensionMismatch {
            expected: dy,
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("observation must be finite"));
    }
    let sp = sigma_points(belief, cfg)?;
    let mut z = vec![0.0; dy];
    let outputs: Vec<DVector<f64>> = sp
        .points
        .iter()
        .map(|x| {
            obs.observe(x.as_slice(), &mut z);
            DVector::from_column_slice(&z)
        })
        .collect();
    let mut y_hat = DVector::zeros(dy);
    for (w, zi) in sp.weights_mean.iter().zip(&outputs) {
        y_hat.axpy(*w, zi, 1.0);
    }
    let mut s = DMatrix::from_diagonal_element(dy, dy, theta_gamma);
    let mut c = DMatrix::zeros(n, dy);
    for ((w, zi), xi) in sp.weights_cov.iter().zip(&outputs).zip(&sp.points) {
        if *w == 0.0 {
            continue;
        }
        let dz = zi - &y_hat;
        let dx = xi - &belief.mean;
        s.ger(*w, &dz, &dz, 1.0);
        c.ger(*w, &dx, &dz, 1.0);
    }
    symmetrize(&mut s);
    let chol = cholesky_with_jitter(&s)
        .ok_or(Error::LikelihoodInvalid("innovation covariance singular"))?;
    let innovation = DVector::from_column_slice(y) - &y_hat;
    let l = chol.l();
    let white = l
        .solve_lower_triangular(&innovation)
        .ok_or(Error::LikelihoodInvalid("innovation covariance singular"))?;
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_lik =
        -0.5 * (dy as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + white.norm_squared());

    // K = C S⁻¹
    let gain = chol.solve(&c.transpose()).transpose();
    let mean = &belief.mean + &gain * &innovation;
    let mut cov = &belief.cov - &gain * &c.transpose();
    symmetrize(&mut cov);
    if !log_lik.is_finite() || !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
        return Err(Error::LikelihoodInvalid("non-finite update"));
    }
    Ok((GaussianBelief { mean, cov }, log_lik, innovation))
}

/// `transitions` predictions followed by one update against `y`.
pub fn ukf_step(
    belief: &GaussianBelief,
    y: &[f64],
    transition: &dyn StateTransition,
    transitions: usize,
    obs: &dyn ObservationModel,
    noise: &NoiseParams,
    cfg: &UkfConfig,
) -> Result<(GaussianBelief, f64)> {
    ukf_step_detailed(belief, y, transition, transitions, obs, noise, cfg).map(|(b, ll, _)| (b, ll))
}

fn ukf_step_detailed(
    belief: &GaussianBelief,
    y: &[f64],
    transition: &dyn StateTransition,
    transitions: usize,
    obs: &dyn ObservationModel,
    noise: &NoiseParams,
    cfg: &UkfConfig,
) -> Result<(GaussianBelief, f64, DVector<f64>)> {
    let mut b = belief.clone();
    for _ in 0..transitions {
        b = predict(&b, transition, noise.theta_sigma, cfg)?;
    }
    update_detailed(&b, y, obs, noise.theta_gamma, cfg)
}

/// Per-observation filter output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnovationRecord {
    pub index: usize,
    pub innovation: Vec<f64>,
    pub log_increment: f64,
}

/// Sum of log-likelihood increments over `observations[1..]`. The filter starts
/// at `N(observations[0], θ_Γ I)`. Invalid steps give `Ok(−∞)`.
pub fn filter_log_likelihood(
    observations: &[Vec<f64>],
    transitions_per_observation: usize,
    transition: &dyn StateTransition,
    obs: &dyn ObservationModel,
    noise: &NoiseParams,
    cfg: &UkfConfig,
) -> Result<f64> {
    run_filter(observations, transitions_per_observation, transition, obs, noise, cfg, None)
}

/// Same recursion as [`filter_log_likelihood`], recording innovations.
pub fn filter_innovations(
    observations: &[Vec<f64>],
    transitions_per_observation: usize,
    transition: &dyn StateTransition,
    obs: &dyn ObservationModel,
    noise: &NoiseParams,
    cfg: &UkfConfig,
) -> Result<(f64, Vec<InnovationRecord>)> {
    let mut records = Vec::new();
    let ll = run_filter(
        observations,
        transitions_per_observation,
        transition,
        obs,
        noise,
        cfg,
        Some(&mut records),
    )?;
    Ok((ll, records))
}

fn run_filter(
    observations: &[Vec<f64>],
    transitions_per_observation: usize,
    transition: &dyn StateTransition,
    obs: &dyn ObservationModel,
    noise: &NoiseParams,
    cfg: &UkfConfig,
    mut records: Option<&mut Vec<InnovationRecord>>,
) -> Result<f64> {
    let first = observations
        .first()
        .ok_or_else(|| Error::invalid("no observations"))?;
    let n = transition.state_dim();
    if first.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: first.len(),
        });
    }
    cfg.validate(n)?;
    if !(noise.theta_sigma.is_finite() && noise.theta_gamma.is_finite()) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut belief = GaussianBelief::isotropic(first, noise.theta_gamma);
    let mut total = 0.0;
    for (k, y) in observations.iter().enumerate().skip(1) {
        let step =
            ukf_step_detailed(&belief, y, transition, transitions_per_observation, obs, noise, cfg);
        match step {
            Ok((b, inc, innovation)) => {
                if let Some(rec) = records.as_deref_mut() {
                    rec.push(InnovationRecord {
                        index: k,
                        innovation: innovation.as_slice().to_vec(),
                        log_increment: inc,
                    });
                }
                total += inc;
                belief = b;
            }
            Err(Error::LikelihoodInvalid(_)) => return Ok(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(total)
}

/// Dictionary and integration scheme; the coefficients come from a
/// [`ParameterVector`].
#[derive(Debug, Clone)]
pub struct ModelSkeleton {
    pub dictionary: Arc<BasisDictionary>,
    pub scheme: Scheme,
}

impl ModelSkeleton {
    pub fn new(dictionary: Arc<BasisDictionary>, scheme: Scheme) -> Result<Self> {
        scheme.validate()?;
        Ok(Self { dictionary, scheme })
    }

    pub fn n_coefficients(&self) -> usize {
        self.dictionary.len()
    }

    pub fn model(&self, theta_psi: &[f64]) -> Result<HamiltonianModel> {
        HamiltonianModel::new(self.dictionary.clone(), theta_psi.to_vec())
    }

    pub fn propagator(&self, theta_psi: &[f64]) -> Result<Propagator<HamiltonianModel>> {
        Propagator::new(self.model(theta_psi)?, self.scheme)
    }

    /// Filter transitions between consecutive observations.
    pub fn transitions_per_observation(&self, spacing: f64) -> Result<usize> {
        let ratio = spacing / self.scheme.dt();
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::invalid(format!(
                "observation spacing {spacing} is not an integer multiple of the learning step {}",
                self.scheme.dt()
            )));
        }
        Ok(steps as usize)
    }
}

/// Marginal log-likelihood of one observed trajectory.
pub fn log_marginal_likelihood(
    data: &ObservedTrajectory,
    params: &ParameterVector,
    skeleton: &ModelSkeleton,
    cfg: &UkfConfig,
) -> Result<f64> {
    if data.observations.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    if data.observations.len() == 1 {
        return Ok(0.0);
    }
    let spacing = data.spacing().expect("at least two times");
    let steps = skeleton.transitions_per_observation(spacing)?;
    let prop = skeleton.propagator(&params.theta_psi)?;
    let noise = params.noise();
    filter_log_likelihood(&data.observations, steps, &prop, &IdentityObservation, &noise, cfg)
}

/// Sum over independent trajectories. Terms are sorted before summation so the
/// result does not depend on the order the trajectories are supplied in.
pub fn multi_trajectory_log_likelihood(
    datasets: &[ObservedTrajectory],
    params: &ParameterVector,
    skeleton: &ModelSkeleton,
    cfg: &UkfConfig,
) -> Result<f64> {
    if datasets.is_empty() {
        return Err(Error::invalid("need at least one trajectory"));
    }
    let mut terms = Vec::with_capacity(datasets.len());
    for d in datasets {
        let ll = log_marginal_likelihood(d, params, skeleton, cfg)?;
        if ll == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        terms.push(ll);
    }
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}
