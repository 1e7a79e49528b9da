//! Oracles shared by the integration tests. None of them call into the
//! library's numerics.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sympid::filter::StateTransition;

pub const TEST_IC: [f64; 4] = [0.15, 0.1, -0.05, 0.1];

/// Cherry vector field written out by hand.
pub fn cherry_field(x: &[f64; 4]) -> [f64; 4] {
    let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
    let dh_dq1 = q1 - p2 * q1 - q2 * p1;
    let dh_dq2 = -2.0 * q2 - q1 * p1;
    let dh_dp1 = p1 + p2 * p1 - q1 * q2;
    let dh_dp2 = -2.0 * p2 + 0.5 * (p1 * p1 - q1 * q1);
    [dh_dp1, dh_dp2, -dh_dq1, -dh_dq2]
}

/// Classical fourth-order Runge-Kutta on the Cherry field.
pub fn rk4(x0: [f64; 4], t: f64, n: usize) -> [f64; 4] {
    let h = t / n as f64;
    let mut x = x0;
    let add = |a: &[f64; 4], b: &[f64; 4], s: f64| -> [f64; 4] { std::array::from_fn(|i| a[i] + s * b[i]) };
    for _ in 0..n {
        let k1 = cherry_field(&x);
        let k2 = cherry_field(&add(&x, &k1, h / 2.0));
        let k3 = cherry_field(&add(&x, &k2, h / 2.0));
        let k4 = cherry_field(&add(&x, &k3, h));
        x = std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    x
}

/// Canonical form on `(q, p, q̃, p̃)` with two degrees of freedom per copy.
pub fn augmented_canonical_form() -> DMatrix<f64> {
    let mut s = DMatrix::zeros(8, 8);
    for (qi, pi) in [(0, 2), (1, 3), (4, 6), (5, 7)] {
        s[(qi, pi)] = 1.0;
        s[(pi, qi)] = -1.0;
    }
    s
}

/// Central-difference Jacobian of `f` at `x`.
pub fn jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], eps: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut hi, mut lo) = (x.to_vec(), x.to_vec());
        hi[j] += eps;
        lo[j] -= eps;
        let (fh, fl) = (f(&hi), f(&lo));
        for i in 0..n {
            jac[(i, j)] = (fh[i] - fl[i]) / (2.0 * eps);
        }
    }
    jac
}

/// `x ↦ A x`.
pub struct Linear(pub DMatrix<f64>);

impl StateTransition for Linear {
    fn state_dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) -> sympid::Result<()> {
        out.copy_from_slice((&self.0 * DVector::from_column_slice(x)).as_slice());
        Ok(())
    }
}

/// Textbook Kalman filter for `x' = A x + N(0, σ I)` applied `k` times per
/// observation, `y = x + N(0, γ I)`, starting from `N(y₀, γ I)`.
pub fn kalman(a: &DMatrix<f64>, ys: &[Vec<f64>], k: usize, sigma: f64, gamma: f64) -> f64 {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut m = DVector::from_column_slice(&ys[0]);
    let mut p = &eye * gamma;
    let mut ll = 0.0;
    for y in &ys[1..] {
        for _ in 0..k {
            m = a * m;
            p = a * &p * a.transpose() + &eye * sigma;
        }
        let s = &p + &eye * gamma;
        let s_inv = s.clone().try_inverse().unwrap();
        let r = DVector::from_column_slice(y) - &m;
        let quad = (r.transpose() * &s_inv * &r)[0];
        ll -= 0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + s.determinant().ln() + quad);
        let gain = &p * &s_inv;
        m += &gain * r;
        p = (&eye - &gain) * p;
    }
    ll
}

/// Random dynamics matrix with spectral radius in [0.8, 1.05).
pub fn random_system(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    a * (rng.gen_range(0.8..1.05) / radius)
}

/// Observations of a linear-Gaussian system.
pub fn simulate_linear(
    rng: &mut ChaCha8Rng,
    a: &DMatrix<f64>,
    n_obs: usize,
    k: usize,
    sigma: f64,
    gamma: f64,
) -> Vec<Vec<f64>> {
    let n = a.nrows();
    let mut noise = |s: f64| DVector::from_fn(n, |_, _| s.sqrt() * rng.sample::<f64, _>(StandardNormal));
    let mut x = DVector::from_fn(n, |i, _| 0.5 + 0.1 * i as f64);
    let mut ys = vec![(&x + noise(gamma)).as_slice().to_vec()];
    for _ in 0..n_obs {
        for _ in 0..k {
            x = a * x + noise(sigma);
        }
        ys.push((&x + noise(gamma)).as_slice().to_vec());
    }
    ys
}

/// Covariance of the 5-D sampler target.
pub fn correlated_covariance() -> DMatrix<f64> {
    let l = DMatrix::from_row_slice(
        5,
        5,
        &[
            1.0, 0.0, 0.0, 0.0, 0.0, //
            0.8, 0.6, 0.0, 0.0, 0.0, //
            -0.5, 0.3, 0.9, 0.0, 0.0, //
            0.2, -0.4, 0.1, 0.5, 0.0, //
            0.0, 0.7, -0.3, 0.2, 0.4,
        ],
    );
    &l * l.transpose()
}

pub const GAUSSIAN_MEAN: [f64; 5] = [1.0, -2.0, 0.5, 0.0, 3.0];

/// Log-density of `N(GAUSSIAN_MEAN, correlated_covariance())` up to a constant.
pub fn correlated_gaussian() -> (usize, impl Fn(&[f64]) -> f64) {
    let prec = correlated_covariance().try_inverse().unwrap();
    let mu = DVector::from_column_slice(&GAUSSIAN_MEAN);
    (5usize, move |x: &[f64]| {
        let r = DVector::from_column_slice(x) - &mu;
        -0.5 * (r.transpose() * &prec * &r)[0]
    })
}

/// Batch-means mean and standard error of component `j`.
pub fn batch_mean(samples: &[Vec<f64>], j: usize, batches: usize) -> (f64, f64) {
    let size = samples.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| samples[b * size..(b + 1) * size].iter().map(|x| x[j]).sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}
