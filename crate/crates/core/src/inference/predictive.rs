//! Point and ensemble predictions from learned coefficients.

use super::{ParameterVector, PosteriorChain};
use crate::error::{Error, Result};
use crate::filter::ModelSkeleton;
use crate::hamiltonian::PhaseState;
use crate::integrators::{Propagation, Trajectory};

/// Propagates the model with coefficients `theta` from `x0`. The skeleton's
/// scheme fixes the prediction step. Divergence truncates the trajectory and
/// is reported in the result rather than as an error.
pub fn map_trajectory(
    theta: &ParameterVector,
    skeleton: &ModelSkeleton,
    x0: &PhaseState,
    n_steps: usize,
) -> Result<Propagation> {
    skeleton.propagator(&theta.theta_psi)?.propagate_partial(x0, n_steps)
}

/// Indices `thin−1, 2·thin−1, …` below `n`: every `thin`-th sample.
pub fn thinned_indices(n: usize, thin: usize) -> Vec<usize> {
    if thin == 0 {
        return Vec::new();
    }
    (thin - 1..n).step_by(thin).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveResult {
    pub mean: Trajectory,
    /// Trajectories of the samples that stayed bounded.
    pub ensemble: Vec<Trajectory>,
    /// Retained-chain indices of the samples in `ensemble`.
    pub sample_indices: Vec<usize>,
    pub diverged: usize,
}

/// Averages the trajectories of every `thin`-th retained sample pointwise.
/// Diverged samples are left out of the mean and counted.
pub fn posterior_predictive_mean(
    chain: &PosteriorChain,
    skeleton: &ModelSkeleton,
    x0: &PhaseState,
    n_steps: usize,
    thin: usize,
) -> Result<PredictiveResult> {
    if thin == 0 {
        return Err(Error::invalid("thinning interval must be at least 1"));
    }
    let retained = chain.retained();
    let picks = thinned_indices(retained.len(), thin);
    if picks.is_empty() {
        return Err(Error::invalid(format!(
            "thinning interval {thin} leaves no samples out of {}",
            retained.len()
        )));
    }

    let mut ensemble = Vec::with_capacity(picks.len());
    let mut sample_indices = Vec::with_capacity(picks.len());
    let mut diverged = 0;
    for &i in &picks {
        let theta = ParameterVector::from_flat(&retained[i])?;
        let run = map_trajectory(&theta, skeleton, x0, n_steps)?;
        if run.diverged_at.is_some() {
            diverged += 1;
        } else {
            ensemble.push(run.trajectory);
            sample_indices.push(i);
        }
    }
    if ensemble.is_empty() {
        return Err(Error::AllSamplesDiverged(diverged));
    }
    if diverged > 0 {
        log::warn!("{diverged} of {} predictive samples diverged", picks.len());
    }

    let d = x0.dof();
    let count = ensemble.len() as f64;
    let states = (0..=n_steps)
        .map(|k| {
            let mut acc = PhaseState::zeros(d);
            for tr in &ensemble {
                let s = &tr.states[k];
                for j in 0..d {
                    acc.q[j] += s.q[j];
                    acc.p[j] += s.p[j];
                }
            }
            if ensemble.len() > 1 {
                acc.q.iter_mut().chain(acc.p.iter_mut()).for_each(|a| *a /= count);
            }
            acc
        })
        .collect();

    Ok(PredictiveResult {
        mean: Trajectory {
            dt: ensemble[0].dt,
            states,
        },
        ensemble,
        sample_indices,
        diverged,
    })
}
