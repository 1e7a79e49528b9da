//! Derivative-free maximization: restarted Nelder-Mead followed by a compass
//! search that certifies coordinate-wise local optimality.

use serde::{Deserialize, Serialize};

use super::LogDensity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    /// Budget across all simplex restarts (the polish phase is budgeted separately).
    pub max_evaluations: usize,
    pub restarts: usize,
    /// Initial simplex edge, relative to `max(|x_i|, 1)`.
    pub initial_step: f64,
    /// A restart that gains less than this stops the simplex phase.
    pub restart_tolerance: f64,
    /// Simplex convergence: spread of objective values.
    pub simplex_ftol: f64,
    /// First compass step; halved down to `polish_min_step`.
    pub polish_initial_step: f64,
    pub polish_min_step: f64,
    /// Gains at the minimum step below this do not count as improvement.
    pub polish_min_gain: f64,
    pub polish_max_evaluations: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_evaluations: 20_000,
            restarts: 6,
            initial_step: 0.1,
            restart_tolerance: 1e-6,
            simplex_ftol: 1e-10,
            polish_initial_step: 1e-2,
            polish_min_step: 1e-6,
            polish_min_gain: 1e-8,
            polish_max_evaluations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub point: Vec<f64>,
    pub log_density: f64,
    pub start_log_density: f64,
    pub evaluations: usize,
    /// Best value seen after each evaluation.
    pub best_history: Vec<f64>,
    /// The compass search ended with no coordinate move of `polish_min_step`
    /// gaining more than `polish_min_gain`.
    pub converged: bool,
}

struct Tracker<'a> {
    target: &'a dyn LogDensity,
    evaluations: usize,
    best: f64,
    best_point: Vec<f64>,
    history: Vec<f64>,
}

impl<'a> Tracker<'a> {
    /// Returns the objective to minimize, `−log π`.
    fn cost(&mut self, x: &[f64]) -> f64 {
        let v = self.target.log_density(x);
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        self.evaluations += 1;
        if v > self.best {
            self.best = v;
            self.best_point.clear();
            self.best_point.extend_from_slice(x);
        }
        self.history.push(self.best);
        -v
    }
}

/// Local maximizer of `target` starting at `start`.
pub fn maximize(
    target: &dyn LogDensity,
    start: &[f64],
    settings: &OptimizerSettings,
) -> Result<MapResult> {
    if start.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: start.len(),
        });
    }
    let start_value = target.log_density(start);
    if !start_value.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let mut tr = Tracker {
        target,
        evaluations: 1,
        best: start_value,
        best_point: start.to_vec(),
        history: vec![start_value],
    };

    let budget_end = settings.max_evaluations;
    for _ in 0..=settings.restarts {
        if tr.evaluations >= budget_end {
            break;
        }
        let before = tr.best;
        let x0 = tr.best_point.clone();
        nelder_mead(&mut tr, &x0, settings, budget_end);
        if tr.best - before < settings.restart_tolerance {
            break;
        }
    }

    let converged = compass_polish(&mut tr, settings);

    Ok(MapResult {
        point: tr.best_point,
        log_density: tr.best,
        start_log_density: start_value,
        evaluations: tr.evaluations,
        best_history: tr.history,
        converged,
    })
}

/// Adaptive-coefficient Nelder-Mead (Gao & Han) minimizing `−log π`.
fn nelder_mead(tr: &mut Tracker<'_>, x0: &[f64], s: &OptimizerSettings, budget_end: usize) {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += s.initial_step * x0[i].abs().max(1.0);
        simplex.push(v);
    }
    let mut f: Vec<f64> = simplex.iter().map(|v| tr.cost(v)).collect();

    let mut centroid = vec![0.0; n];
    let point = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(w).map(|(ci, wi)| ci + t * (ci - wi)).collect()
    };

    while tr.evaluations < budget_end {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        f = order.iter().map(|&i| f[i]).collect();

        let spread = f[n] - f[0];
        if f[0].is_finite() && spread.is_finite() && spread <= s.simplex_ftol * (1.0 + f[0].abs()) {
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let worst = simplex[n].clone();

        let xr = point(&centroid, &worst, alpha);
        let fr = tr.cost(&xr);
        if fr < f[0] {
            let xe = point(&centroid, &worst, alpha * beta);
            let fe = tr.cost(&xe);
            if fe < fr {
                simplex[n] = xe;
                f[n] = fe;
            } else {
                simplex[n] = xr;
                f[n] = fr;
            }
            continue;
        }
        if fr < f[n - 1] {
            simplex[n] = xr;
            f[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < f[n] {
            let xc = point(&centroid, &worst, alpha * gamma);
            let fc = tr.cost(&xc);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = point(&centroid, &worst, -gamma);
            let fc = tr.cost(&xc);
            let ok = fc < f[n];
            (xc, fc, ok)
        };
        if accept {
            simplex[n] = xc;
            f[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + delta * (*x - b);
            }
            f[i] = tr.cost(&simplex[i]);
            if tr.evaluations >= budget_end {
                break;
            }
        }
    }
}

/// Coordinate search with halving steps; returns whether the final step
/// certified local optimality.
fn compass_polish(tr: &mut Tracker<'_>, s: &OptimizerSettings) -> bool {
    let budget_end = tr.evaluations + s.polish_max_evaluations;
    let n = tr.best_point.len();
    let mut step = s.polish_initial_step.max(s.polish_min_step);
    loop {
        let at_min = step <= s.polish_min_step * (1.0 + 1e-12);
        let min_gain = if at_min { s.polish_min_gain } else { 0.0 };
        let mut improved = false;
        for i in 0..n {
            for dir in [1.0, -1.0] {
                if tr.evaluations >= budget_end {
                    return false;
                }
                let current = tr.best;
                let mut x = tr.best_point.clone();
                x[i] += dir * step;
                let before_best = tr.best_point.clone();
                let v = -tr.cost(&x);
                if v - current > min_gain {
                    improved = true;
                    break;
                } else if tr.best > current {
                    // sub-threshold gain: keep the certified point
                    tr.best = current;
                    tr.best_point = before_best;
                    if let Some(last) = tr.history.last_mut() {
                        *last = current;
                    }
                }
            }
        }
        if !improved {
            if at_min {
                return true;
            }
            step = (step * 0.5).max(s.polish_min_step);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_optimum() {
        let target_point = vec![0.3, -1.2, 2.0, 0.0, 0.7];
        let tp = target_point.clone();
        let target = (5usize, move |x: &[f64]| -> f64 {
            -x.iter().zip(&tp).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        });
        let r = maximize(&target, &[0.0; 5], &OptimizerSettings::default()).unwrap();
        for (a, b) in r.point.iter().zip(&target_point) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(r.converged);
        assert!(r.best_history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn lasso_soft_threshold() {
        // log p(x) = -(x - y)^2 / (2 s2) - |x| / b  → x* = sign(y) max(|y| - s2/b, 0)
        for (y, s2, b) in [(1.0, 0.2, 0.5), (0.1, 0.2, 0.5), (-0.9, 0.1, 1.0)] {
            let target = (1usize, move |x: &[f64]| -> f64 {
                -(x[0] - y) * (x[0] - y) / (2.0 * s2) - x[0].abs() / b
            });
            let expected = f64::signum(y) * (f64::abs(y) - s2 / b).max(0.0);
            let r = maximize(&target, &[0.5], &OptimizerSettings::default()).unwrap();
            assert!((r.point[0] - expected).abs() < 1e-5, "{} vs {expected}", r.point[0]);
        }
    }

    #[test]
    fn infinite_start_is_rejected() {
        let target = (2usize, |_: &[f64]| f64::NEG_INFINITY);
        assert!(matches!(
            maximize(&target, &[0.0, 0.0], &OptimizerSettings::default()),
            Err(Error::NonFiniteStart)
        ));
    }

    #[test]
    fn cliffs_are_avoided() {
        // maximum at 1.0 but -inf beyond 1.5
        let target = (2usize, |x: &[f64]| -> f64 {
            if x[0] > 1.5 {
                f64::NEG_INFINITY
            } else {
                -(x[0] - 1.0).powi(2) - (x[1] + 0.5).powi(2)
            }
        });
        let r = maximize(&target, &[1.4, 0.0], &OptimizerSettings::default()).unwrap();
        assert!((r.point[0] - 1.0).abs() < 1e-6 && (r.point[1] + 0.5).abs() < 1e-6);
    }
}
