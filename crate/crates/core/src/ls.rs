//! Least-squares dictionary regression on finite-difference derivatives.
//!
//! With `φ_i` the dictionary and `(q̇, ṗ)` estimated from samples, the
//! coefficients solve `A c = b` where `a_ij = mean_k ∇φ_i·∇φ_j` and
//! `b_i = mean_k [−ṗ, q̇]·∇φ_i`, gradients ordered `(∂q, ∂p)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dataset::ObservedTrajectory;
use crate::error::{Error, Result};
use crate::hamiltonian::{BasisDictionary, HamiltonianModel, PhaseState};

/// Time derivatives aligned with the sampled states.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEstimates {
    pub qdot: Vec<Vec<f64>>,
    pub pdot: Vec<Vec<f64>>,
}

impl DerivativeEstimates {
    pub fn len(&self) -> usize {
        self.qdot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qdot.is_empty()
    }

    /// Appends another set (e.g. from a second trajectory).
    pub fn extend(&mut self, other: DerivativeEstimates) {
        self.qdot.extend(other.qdot);
        self.pdot.extend(other.pdot);
    }
}

/// Second-order differences: central inside, three-point one-sided at the ends.
pub fn finite_difference(states: &[PhaseState], h: f64) -> Result<DerivativeEstimates> {
    let k = states.len();
    if k < 3 {
        return Err(Error::invalid(format!(
            "finite differences need at least 3 samples, got {k}"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("sample spacing must be positive, got {h}")));
    }
    let d = states[0].dof();
    if let Some(s) = states.iter().find(|s| s.dof() != d) {
        return Err(Error::DimensionMismatch {
            expected: 2 * d,
            got: 2 * s.dof(),
        });
    }

    let diff = |get: &dyn Fn(&PhaseState) -> &[f64]| -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let x = |m: usize| get(&states[m])[j];
                        if i == 0 {
                            (-3.0 * x(0) + 4.0 * x(1) - x(2)) / (2.0 * h)
                        } else if i == k - 1 {
                            (3.0 * x(k - 1) - 4.0 * x(k - 2) + x(k - 3)) / (2.0 * h)
                        } else {
                            (x(i + 1) - x(i - 1)) / (2.0 * h)
                        }
                    })
                    .collect()
            })
            .collect()
    };
    Ok(DerivativeEstimates {
        qdot: diff(&|s| &s.q),
        pdot: diff(&|s| &s.p),
    })
}

/// Normal-equation matrix `A` and right-hand side `b`.
pub fn assemble(
    states: &[PhaseState],
    derivs: &DerivativeEstimates,
    dict: &BasisDictionary,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = states.len();
    if k == 0 {
        return Err(Error::invalid("assembly needs at least one sample"));
    }
    if derivs.len() != k || derivs.pdot.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: derivs.len(),
        });
    }
    let d = dict.state_dim() / 2;
    let n = dict.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    let mut g = DMatrix::zeros(2 * d, n);
    let mut target = DVector::zeros(2 * d);
    let mut x = vec![0.0; 2 * d];
    for (i, s) in states.iter().enumerate() {
        if s.dof() != d {
            return Err(Error::DimensionMismatch {
                expected: 2 * d,
                got: 2 * s.dof(),
            });
        }
        x[..d].copy_from_slice(&s.q);
        x[d..].copy_from_slice(&s.p);
        for (col, grad) in dict.gradients_all(&x).iter().enumerate() {
            g.column_mut(col).copy_from_slice(grad);
        }
        for j in 0..d {
            target[j] = -derivs.pdot[i][j];
            target[d + j] = derivs.qdot[i][j];
        }
        a.gemm_tr(1.0, &g, &g, 1.0);
        b.gemv_tr(1.0, &g, &target, 1.0);
    }
    let scale = 1.0 / k as f64;
    a *= scale;
    b *= scale;
    // exact symmetry
    let at = a.transpose();
    a = (a + at) * 0.5;
    Ok((a, b))
}

/// Minimum-norm least-squares solution of `A c = b` via the SVD. A positive
/// `regularization` λ applies Tikhonov filter factors `s/(s² + λ)`.
pub fn solve_ls(a: &DMatrix<f64>, b: &DVector<f64>, regularization: f64) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    if !(regularization >= 0.0) {
        return Err(Error::invalid("regularization must be nonnegative"));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let s_max = svd.singular_values.max();
    let tol = f64::EPSILON * a.nrows().max(a.ncols()) as f64 * s_max;
    let utb = u.tr_mul(b);
    let mut coeff = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            coeff[i] = utb[i] * s / (s * s + regularization);
        }
    }
    Ok(v_t.tr_mul(&coeff))
}

/// Full baseline fit: differentiate each trajectory's observations, pool the
/// samples, assemble and solve.
pub fn fit_ls(
    data: &[ObservedTrajectory],
    dict: Arc<BasisDictionary>,
    regularization: f64,
) -> Result<HamiltonianModel> {
    if data.is_empty() {
        return Err(Error::invalid("LS fit needs at least one trajectory"));
    }
    let mut states = Vec::new();
    let mut derivs = DerivativeEstimates {
        qdot: Vec::new(),
        pdot: Vec::new(),
    };
    for tr in data {
        tr.validate()?;
        let h = tr
            .spacing()
            .ok_or_else(|| Error::invalid("trajectory has a single sample"))?;
        let obs = tr.observed_states()?;
        derivs.extend(finite_difference(&obs, h)?);
        states.extend(obs);
    }
    let (a, b) = assemble(&states, &derivs, &dict)?;
    let c = solve_ls(&a, &b, regularization)?;
    HamiltonianModel::new(dict, c.iter().copied().collect())
}
