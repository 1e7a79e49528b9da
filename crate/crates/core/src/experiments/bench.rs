//! Timing and integrator-parameter sweeps.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{relative_error, truth_propagator, ExperimentConfig};
use crate::dataset::{NoiseSpec, ObservedTrajectory};
use crate::error::{Error, Result};
use crate::filter::{log_marginal_likelihood, ModelSkeleton};
use crate::hamiltonian::{build_dictionary, cherry_coefficients, BasisKind, CherryHamiltonian, Hamiltonian};
use crate::inference::ParameterVector;
use crate::integrators::{lift, restrict, tao_step, Propagator, Scheme, TaoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub n_observations: usize,
    /// Best of the repeats.
    pub seconds: f64,
    pub log_likelihood: f64,
}

/// Wall-clock cost of one marginal-likelihood evaluation for each number of
/// observations in `ns`, at the true Cherry coefficients in a monomial
/// dictionary. Observations are clean truth at the configured spacing,
/// cycled through the configured horizon since Cherry trajectories blow up
/// in finite time.
pub fn likelihood_timing(cfg: &ExperimentConfig, ns: &[usize], repeats: usize) -> Result<Vec<TimingPoint>> {
    cfg.validate()?;
    let d = &cfg.data;
    let truth = truth_propagator(d)?.propagate(&d.test_ic()?, d.data_steps())?;
    let period = d.data_steps() / d.observation_stride;
    let dict = Arc::new(build_dictionary(BasisKind::Monomial, 4, cfg.model.max_degree)?);
    let theta = ParameterVector::new(cherry_coefficients(&dict)?, 1e-6, 1e-4)?;
    let skeleton = ModelSkeleton::new(
        dict,
        Scheme::Tao(TaoConfig::new(cfg.model.omega, cfg.model.learning_dt)?),
    )?;

    ns.iter()
        .map(|&n| {
            let rows: Vec<Vec<f64>> = (0..=n)
                .map(|k| truth.states[(k % period) * d.observation_stride].to_vec())
                .collect();
            let data = ObservedTrajectory {
                initial_condition: d.test_ic()?,
                times: (0..=n).map(|k| k as f64 * d.observation_spacing()).collect(),
                observations: rows.clone(),
                clean: rows,
                noise: NoiseSpec::none(0),
            };
            let mut best = f64::INFINITY;
            let mut ll = f64::NAN;
            for _ in 0..repeats.max(1) {
                let t0 = Instant::now();
                ll = log_marginal_likelihood(&data, &theta, &skeleton, &cfg.ukf)?;
                best = best.min(t0.elapsed().as_secs_f64());
            }
            Ok(TimingPoint {
                n_observations: n,
                seconds: best,
                log_likelihood: ll,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::invalid("slope needs at least two positive points"));
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaSweepRow {
    pub omega: f64,
    pub max_energy_error: f64,
    pub max_copy_gap: f64,
    /// Against an RK2 solution at a 50× finer step.
    pub trajectory_error: Option<f64>,
    pub diverged_at: Option<usize>,
}

/// Runs the Tao scheme on Cherry from the test IC for the prediction horizon
/// at the data step, once per `ω`.
pub fn omega_sweep(cfg: &ExperimentConfig, omegas: &[f64]) -> Result<Vec<OmegaSweepRow>> {
    cfg.validate()?;
    let x0 = cfg.data.test_ic()?;
    let dt = cfg.data.dt;
    let steps = (cfg.prediction.horizon / dt).round() as usize;
    let fine = 50;
    let reference = Propagator::new(CherryHamiltonian, Scheme::Rk2 { dt: dt / fine as f64 })?
        .propagate(&x0, steps * fine)?;
    let reference = crate::integrators::Trajectory {
        dt,
        states: reference.states.into_iter().step_by(fine).collect(),
    };
    let h0 = CherryHamiltonian.value_at(&x0)?;

    omegas
        .iter()
        .map(|&omega| {
            let tao = TaoConfig::new(omega, dt)?;
            let mut aug = lift(&x0);
            let mut states = vec![x0.clone()];
            let (mut energy, mut gap) = (0.0f64, 0.0f64);
            let mut diverged_at = None;
            for k in 1..=steps {
                match tao_step(&aug, &tao, &CherryHamiltonian) {
                    Ok(next) if next.is_finite() => aug = next,
                    _ => {
                        diverged_at = Some(k);
                        break;
                    }
                }
                let x = restrict(&aug);
                energy = energy.max((CherryHamiltonian.value_at(&x)? - h0).abs());
                gap = gap.max(aug.copy_gap());
                states.push(x);
            }
            let traj = crate::integrators::Trajectory { dt, states };
            let trajectory_error = if diverged_at.is_none() {
                Some(relative_error(&traj, &reference, 1, steps)?)
            } else {
                None
            };
            Ok(OmegaSweepRow {
                omega,
                max_energy_error: energy,
                max_copy_gap: gap,
                trajectory_error,
                diverged_at,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|x| (*x, 3.0 * x * x)).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(loglog_slope(&[(1.0, 1.0)]).is_err());
    }
}
