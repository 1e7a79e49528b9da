//! Explicit symplectic integration of nonseparable Hamiltonians in an extended
//! phase space, plus an explicit-midpoint RK2 baseline.
//!
//! The extended state `(q, p, q̃, p̃)` evolves under
//! `H(q, p̃) + H(q̃, p) + ω(‖q − q̃‖²/2 + ‖p − p̃‖²/2)`. Each of the three terms
//! has an exact explicit flow; a Strang composition of those flows gives a
//! second-order symplectic one-step map.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{Hamiltonian, PhaseState};

/// Any state entry whose magnitude exceeds this counts as a blow-up.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Degrees of freedom served from stack scratch in [`Propagator::step_into`].
const STACK_DOF: usize = 8;

/// Original and fictitious copies of phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub q_tilde: Vec<f64>,
    pub p_tilde: Vec<f64>,
}

impl AugmentedState {
    pub fn new(q: Vec<f64>, p: Vec<f64>, q_tilde: Vec<f64>, p_tilde: Vec<f64>) -> Result<Self> {
        let d = q.len();
        for len in [p.len(), q_tilde.len(), p_tilde.len()] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, got: len });
            }
        }
        Ok(Self {
            q,
            p,
            q_tilde,
            p_tilde,
        })
    }

    /// Builds from `[q, p, q̃, p̃]` stacked.
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() % 4 != 0 || x.is_empty() {
            return Err(Error::invalid(format!(
                "augmented state length {} is not a positive multiple of 4",
                x.len()
            )));
        }
        let d = x.len() / 4;
        Ok(Self {
            q: x[..d].to_vec(),
            p: x[d..2 * d].to_vec(),
            q_tilde: x[2 * d..3 * d].to_vec(),
            p_tilde: x[3 * d..].to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        [&self.q[..], &self.p, &self.q_tilde, &self.p_tilde].concat()
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.entries().all(f64::is_finite)
    }

    fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.q
            .iter()
            .chain(&self.p)
            .chain(&self.q_tilde)
            .chain(&self.p_tilde)
            .copied()
    }

    fn within_bound(&self) -> bool {
        self.entries().all(|v| v.abs() <= DIVERGENCE_BOUND)
    }

    /// `‖q − q̃‖ + ‖p − p̃‖`.
    pub fn copy_gap(&self) -> f64 {
        let dq: f64 = self.q.iter().zip(&self.q_tilde).map(|(a, b)| (a - b).powi(2)).sum();
        let dp: f64 = self.p.iter().zip(&self.p_tilde).map(|(a, b)| (a - b).powi(2)).sum();
        dq.sqrt() + dp.sqrt()
    }
}

/// `L`: duplicate `(q, p)` into `(q, p, q, p)`.
pub fn lift(state: &PhaseState) -> AugmentedState {
    AugmentedState {
        q: state.q.clone(),
        p: state.p.clone(),
        q_tilde: state.q.clone(),
        p_tilde: state.p.clone(),
    }
}

/// `L†`: keep `(q, p)`, drop the fictitious copy.
pub fn restrict(aug: &AugmentedState) -> PhaseState {
    PhaseState {
        q: aug.q.clone(),
        p: aug.p.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaoConfig {
    /// Binding constant between the two copies.
    pub omega: f64,
    pub dt: f64,
}

impl TaoConfig {
    pub fn new(omega: f64, dt: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::invalid(format!("omega must be positive, got {omega}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { omega, dt })
    }
}

/// Scratch space for gradient evaluations.
struct GradBuf {
    dq: Vec<f64>,
    dp: Vec<f64>,
}

impl GradBuf {
    fn new(d: usize) -> Self {
        Self {
            dq: vec![0.0; d],
            dp: vec![0.0; d],
        }
    }

    fn finite(&self) -> bool {
        self.dq.iter().chain(&self.dp).all(|v| v.is_finite())
    }
}

/// Copy halves of an extended state, borrowed separately.
struct Split<'a> {
    q: &'a mut [f64],
    p: &'a mut [f64],
    qt: &'a mut [f64],
    pt: &'a mut [f64],
}

impl<'a> Split<'a> {
    fn of(aug: &'a mut AugmentedState) -> Self {
        Self {
            q: &mut aug.q,
            p: &mut aug.p,
            qt: &mut aug.q_tilde,
            pt: &mut aug.p_tilde,
        }
    }
}

fn finite(dq: &[f64], dp: &[f64]) -> bool {
    dq.iter().chain(dp).all(|v| v.is_finite())
}

fn flow_a_raw<H: Hamiltonian + ?Sized>(
    x: &mut Split<'_>,
    dt: f64,
    h: &H,
    dq: &mut [f64],
    dp: &mut [f64],
) -> Result<()> {
    h.gradient(x.q, x.pt, dq, dp);
    if !finite(dq, dp) {
        return Err(Error::Divergence { step: 0 });
    }
    for j in 0..x.q.len() {
        x.p[j] -= dt * dq[j];
        x.qt[j] += dt * dp[j];
    }
    Ok(())
}

fn flow_b_raw<H: Hamiltonian + ?Sized>(
    x: &mut Split<'_>,
    dt: f64,
    h: &H,
    dq: &mut [f64],
    dp: &mut [f64],
) -> Result<()> {
    h.gradient(x.qt, x.p, dq, dp);
    if !finite(dq, dp) {
        return Err(Error::Divergence { step: 0 });
    }
    for j in 0..x.q.len() {
        x.q[j] += dt * dp[j];
        x.pt[j] -= dt * dq[j];
    }
    Ok(())
}

fn flow_c_raw(x: &mut Split<'_>, dt: f64, omega: f64) {
    let (s, c) = (2.0 * omega * dt).sin_cos();
    for j in 0..x.q.len() {
        let dq = x.q[j] - x.qt[j];
        let dp = x.p[j] - x.pt[j];
        // half the change of the rotated difference
        let hq = 0.5 * ((c - 1.0) * dq + s * dp);
        let hp = 0.5 * (-s * dq + (c - 1.0) * dp);
        x.q[j] += hq;
        x.p[j] += hp;
        x.qt[j] -= hq;
        x.pt[j] -= hp;
    }
}

fn tao_step_raw<H: Hamiltonian + ?Sized>(
    x: &mut Split<'_>,
    cfg: &TaoConfig,
    h: &H,
    dq: &mut [f64],
    dp: &mut [f64],
) -> Result<()> {
    let half = 0.5 * cfg.dt;
    flow_a_raw(x, half, h, dq, dp)?;
    flow_b_raw(x, half, h, dq, dp)?;
    flow_c_raw(x, cfg.dt, cfg.omega);
    flow_b_raw(x, half, h, dq, dp)?;
    flow_a_raw(x, half, h, dq, dp)?;
    Ok(())
}

fn flow_a_in_place<H: Hamiltonian + ?Sized>(
    aug: &mut AugmentedState,
    dt: f64,
    h: &H,
    buf: &mut GradBuf,
) -> Result<()> {
    flow_a_raw(&mut Split::of(aug), dt, h, &mut buf.dq, &mut buf.dp)
}

fn flow_b_in_place<H: Hamiltonian + ?Sized>(
    aug: &mut AugmentedState,
    dt: f64,
    h: &H,
    buf: &mut GradBuf,
) -> Result<()> {
    flow_b_raw(&mut Split::of(aug), dt, h, &mut buf.dq, &mut buf.dp)
}

fn flow_c_in_place(aug: &mut AugmentedState, dt: f64, omega: f64) {
    flow_c_raw(&mut Split::of(aug), dt, omega)
}

fn tao_step_in_place<H: Hamiltonian + ?Sized>(
    aug: &mut AugmentedState,
    cfg: &TaoConfig,
    h: &H,
    buf: &mut GradBuf,
) -> Result<()> {
    tao_step_raw(&mut Split::of(aug), cfg, h, &mut buf.dq, &mut buf.dp)
}

/// Exact flow of `H(q, p̃)`: moves `p` and `q̃`.
pub fn flow_a<H: Hamiltonian + ?Sized>(aug: &AugmentedState, dt: f64, h: &H) -> Result<AugmentedState> {
    let mut out = aug.clone();
    flow_a_in_place(&mut out, dt, h, &mut GradBuf::new(aug.dof()))?;
    Ok(out)
}

/// Exact flow of `H(q̃, p)`: moves `q` and `p̃`.
pub fn flow_b<H: Hamiltonian + ?Sized>(aug: &AugmentedState, dt: f64, h: &H) -> Result<AugmentedState> {
    let mut out = aug.clone();
    flow_b_in_place(&mut out, dt, h, &mut GradBuf::new(aug.dof()))?;
    Ok(out)
}

/// Exact flow of the binding term `ω(‖q − q̃‖² + ‖p − p̃‖²)/2`: rotates the
/// copy difference by angle `2ω·dt`, leaving the copy sum fixed.
pub fn flow_c(aug: &AugmentedState, dt: f64, omega: f64) -> AugmentedState {
    let mut out = aug.clone();
    flow_c_in_place(&mut out, dt, omega);
    out
}

/// One Strang step `A(dt/2) B(dt/2) C(dt) B(dt/2) A(dt/2)`, rightmost applied first.
pub fn tao_step<H: Hamiltonian + ?Sized>(
    aug: &AugmentedState,
    cfg: &TaoConfig,
    h: &H,
) -> Result<AugmentedState> {
    let mut out = aug.clone();
    tao_step_in_place(&mut out, cfg, h, &mut GradBuf::new(aug.dof()))?;
    Ok(out)
}

fn rk2_step_in_place<H: Hamiltonian + ?Sized>(
    x: &mut PhaseState,
    dt: f64,
    h: &H,
    buf: &mut GradBuf,
    mid: &mut PhaseState,
) -> Result<()> {
    let d = x.dof();
    h.gradient(&x.q, &x.p, &mut buf.dq, &mut buf.dp);
    if !buf.finite() {
        return Err(Error::Divergence { step: 0 });
    }
    for j in 0..d {
        mid.q[j] = x.q[j] + 0.5 * dt * buf.dp[j];
        mid.p[j] = x.p[j] - 0.5 * dt * buf.dq[j];
    }
    h.gradient(&mid.q, &mid.p, &mut buf.dq, &mut buf.dp);
    if !buf.finite() {
        return Err(Error::Divergence { step: 0 });
    }
    for j in 0..d {
        x.q[j] += dt * buf.dp[j];
        x.p[j] -= dt * buf.dq[j];
    }
    Ok(())
}

/// Explicit midpoint rule on `(q̇, ṗ) = (∂H/∂p, −∂H/∂q)`. Not symplectic.
pub fn rk2_step<H: Hamiltonian + ?Sized>(state: &PhaseState, dt: f64, h: &H) -> Result<PhaseState> {
    let mut out = state.clone();
    let mut mid = state.clone();
    rk2_step_in_place(&mut out, dt, h, &mut GradBuf::new(state.dof()), &mut mid)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scheme {
    Tao(TaoConfig),
    Rk2 { dt: f64 },
}

impl Scheme {
    pub fn dt(&self) -> f64 {
        match self {
            Scheme::Tao(cfg) => cfg.dt,
            Scheme::Rk2 { dt } => *dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scheme::Tao(cfg) => TaoConfig::new(cfg.omega, cfg.dt).map(|_| ()),
            Scheme::Rk2 { dt } if *dt > 0.0 && dt.is_finite() => Ok(()),
            Scheme::Rk2 { dt } => Err(Error::invalid(format!("dt must be positive, got {dt}"))),
        }
    }
}

/// Sequence of phase states on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<PhaseState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.states.first().map_or(0, PhaseState::dof);
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|j| format!("q{j}")));
        header.extend((1..=d).map(|j| format!("p{j}")));
        wtr.write_record(&header)?;
        for (k, s) in self.states.iter().enumerate() {
            let mut row = vec![format!("{:.16e}", self.time(k))];
            row.extend(s.q.iter().chain(&s.p).map(|v| format!("{v:.16e}")));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads a `t,q1..qd,p1..pd` file; the spacing is taken from the first two rows.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let width = rdr.headers()?.len();
        if width < 3 || (width - 1) % 2 != 0 {
            return Err(Error::invalid(format!("trajectory CSV has {width} columns")));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("bad number in trajectory CSV: {e}")))?;
            times.push(vals[0]);
            states.push(PhaseState::from_slice(&vals[1..])?);
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        Ok(Self { dt, states })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Outcome of a propagation that may stop early.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub trajectory: Trajectory,
    /// Step at which the state blew up; the trajectory holds the states before it.
    pub diverged_at: Option<usize>,
}

/// `Ψ`: a Hamiltonian paired with a one-step scheme.
#[derive(Debug, Clone)]
pub struct Propagator<H> {
    hamiltonian: H,
    scheme: Scheme,
}

impl<H: Hamiltonian> Propagator<H> {
    pub fn new(hamiltonian: H, scheme: Scheme) -> Result<Self> {
        scheme.validate()?;
        Ok(Self {
            hamiltonian,
            scheme,
        })
    }

    pub fn hamiltonian(&self) -> &H {
        &self.hamiltonian
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn state_dim(&self) -> usize {
        2 * self.hamiltonian.dof()
    }

    /// Runs `n_steps` steps from `x0`, stopping at the first blow-up.
    ///
    /// The Tao scheme lifts once and carries the fictitious copy across steps.
    pub fn propagate_partial(&self, x0: &PhaseState, n_steps: usize) -> Result<Propagation> {
        let d = self.hamiltonian.dof();
        if x0.dof() != d {
            return Err(Error::DimensionMismatch {
                expected: 2 * d,
                got: 2 * x0.dof(),
            });
        }
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(x0.clone());
        let mut buf = GradBuf::new(d);
        let mut diverged_at = None;
        match &self.scheme {
            Scheme::Tao(cfg) => {
                let mut aug = lift(x0);
                for k in 1..=n_steps {
                    let ok = tao_step_in_place(&mut aug, cfg, &self.hamiltonian, &mut buf).is_ok()
                        && aug.is_finite()
                        && aug.within_bound();
                    if !ok {
                        diverged_at = Some(k);
                        break;
                    }
                    states.push(restrict(&aug));
                }
            }
            Scheme::Rk2 { dt } => {
                let mut x = x0.clone();
                let mut mid = x0.clone();
                for k in 1..=n_steps {
                    let ok = rk2_step_in_place(&mut x, *dt, &self.hamiltonian, &mut buf, &mut mid)
                        .is_ok()
                        && x.q.iter().chain(&x.p).all(|v| v.abs() <= DIVERGENCE_BOUND);
                    if !ok {
                        diverged_at = Some(k);
                        break;
                    }
                    states.push(x.clone());
                }
            }
        }
        Ok(Propagation {
            trajectory: Trajectory {
                dt: self.scheme.dt(),
                states,
            },
            diverged_at,
        })
    }

    /// Like [`propagate_partial`](Self::propagate_partial) but a blow-up is an error.
    pub fn propagate(&self, x0: &PhaseState, n_steps: usize) -> Result<Trajectory> {
        let run = self.propagate_partial(x0, n_steps)?;
        match run.diverged_at {
            Some(step) => Err(Error::Divergence { step }),
            None => Ok(run.trajectory),
        }
    }

    /// One application of `Ψ` on a stacked `[q, p]` vector. Tao steps lift
    /// `x` afresh and restrict the result.
    pub fn step_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.hamiltonian.dof();
        if x.len() != 2 * d || out.len() != 2 * d {
            return Err(Error::DimensionMismatch {
                expected: 2 * d,
                got: x.len().min(out.len()),
            });
        }
        let mut stack = [0.0; 6 * STACK_DOF];
        let mut heap;
        let scratch: &mut [f64] = if d <= STACK_DOF {
            &mut stack[..6 * d]
        } else {
            heap = vec![0.0; 6 * d];
            &mut heap
        };
        let (state, grad) = scratch.split_at_mut(4 * d);
        let (dq, dp) = grad.split_at_mut(d);
        match &self.scheme {
            Scheme::Tao(cfg) => {
                let (qp, tilde) = state.split_at_mut(2 * d);
                qp.copy_from_slice(x);
                tilde.copy_from_slice(x);
                let (q, p) = qp.split_at_mut(d);
                let (qt, pt) = tilde.split_at_mut(d);
                tao_step_raw(&mut Split { q, p, qt, pt }, cfg, &self.hamiltonian, dq, dp)?;
                out.copy_from_slice(qp);
            }
            Scheme::Rk2 { dt } => {
                let dt = *dt;
                let (q, rest) = state.split_at_mut(d);
                let (p, rest) = rest.split_at_mut(d);
                let (mq, mp) = rest.split_at_mut(d);
                q.copy_from_slice(&x[..d]);
                p.copy_from_slice(&x[d..]);
                self.hamiltonian.gradient(q, p, dq, dp);
                if !finite(dq, dp) {
                    return Err(Error::Divergence { step: 1 });
                }
                for j in 0..d {
                    mq[j] = q[j] + 0.5 * dt * dp[j];
                    mp[j] = p[j] - 0.5 * dt * dq[j];
                }
                self.hamiltonian.gradient(mq, mp, dq, dp);
                if !finite(dq, dp) {
                    return Err(Error::Divergence { step: 1 });
                }
                for j in 0..d {
                    out[j] = q[j] + dt * dp[j];
                    out[d + j] = p[j] - dt * dq[j];
                }
            }
        }
        if out.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Divergence { step: 1 });
        }
        Ok(())
    }
}

pub fn propagate<H: Hamiltonian>(
    prop: &Propagator<H>,
    x0: &PhaseState,
    n_steps: usize,
) -> Result<Trajectory> {
    prop.propagate(x0, n_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{cherry_gradient, CherryHamiltonian};
    use approx::assert_abs_diff_eq;

    /// H = (q² + p²)/2 in one degree of freedom.
    struct Harmonic;
    impl Hamiltonian for Harmonic {
        fn dof(&self) -> usize {
            1
        }
        fn value(&self, q: &[f64], p: &[f64]) -> f64 {
            0.5 * (q[0] * q[0] + p[0] * p[0])
        }
        fn gradient(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) {
            dq[0] = q[0];
            dp[0] = p[0];
        }
    }

    struct Constant;
    impl Hamiltonian for Constant {
        fn dof(&self) -> usize {
            1
        }
        fn value(&self, _: &[f64], _: &[f64]) -> f64 {
            3.0
        }
        fn gradient(&self, _: &[f64], _: &[f64], dq: &mut [f64], dp: &mut [f64]) {
            dq[0] = 0.0;
            dp[0] = 0.0;
        }
    }

    struct Exploding;
    impl Hamiltonian for Exploding {
        fn dof(&self) -> usize {
            1
        }
        fn value(&self, _: &[f64], _: &[f64]) -> f64 {
            f64::NAN
        }
        fn gradient(&self, _: &[f64], _: &[f64], dq: &mut [f64], dp: &mut [f64]) {
            dq[0] = f64::INFINITY;
            dp[0] = 0.0;
        }
    }

    fn aug(x: &[f64]) -> AugmentedState {
        AugmentedState::from_slice(x).unwrap()
    }

    fn ps(x: &[f64]) -> PhaseState {
        PhaseState::from_slice(x).unwrap()
    }

    #[test]
    fn lift_and_restrict() {
        assert_eq!(lift(&ps(&[1.0, 2.0])).to_vec(), vec![1.0, 2.0, 1.0, 2.0]);
        assert_eq!(lift(&PhaseState::zeros(2)).to_vec(), vec![0.0; 8]);
        assert_eq!(restrict(&aug(&[1.0, 2.0, 9.0, 9.0])), ps(&[1.0, 2.0]));
        assert_eq!(restrict(&aug(&[0.3, -0.7, 0.3, -0.7])), ps(&[0.3, -0.7]));
        let x = ps(&[0.1, -0.2, 0.3, 0.4]);
        assert_eq!(restrict(&lift(&x)), x);
    }

    #[test]
    fn flow_a_harmonic() {
        let out = flow_a(&aug(&[1.0, 0.0, 0.0, 1.0]), 0.1, &Harmonic).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, -0.1, 0.1, 1.0]);
        let a = aug(&[0.3, 0.1, -0.2, 0.7]);
        assert_eq!(flow_a(&a, 0.0, &Harmonic).unwrap(), a);
    }

    #[test]
    fn flow_a_cherry_matches_gradient_oracle() {
        let x = ps(&[0.15, 0.1, -0.05, 0.1]);
        let dt = 0.01;
        let g = cherry_gradient(&x).unwrap();
        let out = flow_a(&lift(&x), dt, &CherryHamiltonian).unwrap();
        assert_eq!(out.q, x.q);
        assert_eq!(out.p_tilde, x.p);
        for j in 0..2 {
            assert_abs_diff_eq!(out.p[j], x.p[j] - dt * g[j], epsilon = 1e-16);
            assert_abs_diff_eq!(out.q_tilde[j], x.q[j] + dt * g[2 + j], epsilon = 1e-16);
        }
    }

    #[test]
    fn flow_b_harmonic_and_symmetry() {
        let out = flow_b(&aug(&[0.0, 1.0, 1.0, 0.0]), 0.1, &Harmonic).unwrap();
        assert_eq!(out.to_vec(), vec![0.1, 1.0, 1.0, -0.1]);
        let a = aug(&[0.3, 0.1, -0.2, 0.7]);
        assert_eq!(flow_b(&a, 0.0, &Harmonic).unwrap(), a);

        let swap = |s: &AugmentedState| AugmentedState {
            q: s.q_tilde.clone(),
            p: s.p_tilde.clone(),
            q_tilde: s.q.clone(),
            p_tilde: s.p.clone(),
        };
        let a = aug(&[0.15, 0.1, -0.05, 0.1, 0.12, 0.08, -0.02, 0.11]);
        let via_b = flow_b(&a, 0.03, &CherryHamiltonian).unwrap();
        let via_a = swap(&flow_a(&swap(&a), 0.03, &CherryHamiltonian).unwrap());
        assert_eq!(via_a, via_b);
    }

    #[test]
    fn flow_c_rotation() {
        let a = aug(&[0.4, -0.2, 0.4, -0.2]);
        let out = flow_c(&a, 0.37, 10.0);
        for (x, y) in out.to_vec().iter().zip(a.to_vec()) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-15);
        }
        let omega = 10.0;
        let dt = std::f64::consts::FRAC_PI_2 / (2.0 * omega);
        let out = flow_c(&aug(&[1.0, 0.0, 0.0, 0.0]), dt, omega);
        let expected = [0.5, -0.5, 0.5, 0.5];
        for (x, y) in out.to_vec().iter().zip(expected) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-15);
        }
        let a = aug(&[0.3, 0.1, -0.2, 0.7]);
        assert_eq!(flow_c(&a, 0.0, 10.0), a);
    }

    #[test]
    fn tao_step_is_composition_of_flows() {
        let cfg = TaoConfig::new(10.0, 0.01).unwrap();
        let x = lift(&ps(&[0.15, 0.1, -0.05, 0.1]));
        let h = CherryHamiltonian;
        let mut expected = flow_a(&x, 0.005, &h).unwrap();
        expected = flow_b(&expected, 0.005, &h).unwrap();
        expected = flow_c(&expected, 0.01, 10.0);
        expected = flow_b(&expected, 0.005, &h).unwrap();
        expected = flow_a(&expected, 0.005, &h).unwrap();
        assert_eq!(tao_step(&x, &cfg, &h).unwrap(), expected);

        let zero = TaoConfig { omega: 10.0, dt: 0.0 };
        assert_eq!(tao_step(&x, &zero, &h).unwrap(), x);
    }

    #[test]
    fn rk2_examples() {
        let x = ps(&[1.0, 0.0]);
        assert_eq!(rk2_step(&x, 0.0, &Harmonic).unwrap(), x);
        assert_eq!(rk2_step(&ps(&[0.3, -0.4]), 0.1, &Constant).unwrap(), ps(&[0.3, -0.4]));
        let out = rk2_step(&x, 0.1, &Harmonic).unwrap();
        assert_abs_diff_eq!(out.q[0], 0.995, epsilon = 1e-15);
        assert_abs_diff_eq!(out.p[0], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn propagate_examples() {
        let x0 = ps(&[0.15, 0.1, -0.05, 0.1]);
        let prop = Propagator::new(CherryHamiltonian, Scheme::Tao(TaoConfig::new(10.0, 0.01).unwrap())).unwrap();
        let traj = prop.propagate(&x0, 0).unwrap();
        assert_eq!(traj.states, vec![x0.clone()]);

        let traj = prop.propagate(&x0, 1600).unwrap();
        assert_eq!(traj.len(), 1601);
        for s in &traj.states {
            let h = CherryHamiltonian.value(&s.q, &s.p);
            assert!((h + 0.00775).abs() <= 1e-4, "energy {h}");
        }

        let rk = Propagator::new(Harmonic, Scheme::Rk2 { dt: 0.1 }).unwrap();
        let t = rk.propagate(&ps(&[1.0, 0.0]), 1).unwrap();
        assert_abs_diff_eq!(t.states[1].q[0], 0.995, epsilon = 1e-15);
        assert_abs_diff_eq!(t.states[1].p[0], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn divergence_is_step_indexed() {
        let prop = Propagator::new(Exploding, Scheme::Tao(TaoConfig::new(10.0, 0.1).unwrap())).unwrap();
        match prop.propagate(&ps(&[0.0, 0.0]), 5) {
            Err(Error::Divergence { step }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
        let run = prop.propagate_partial(&ps(&[0.0, 0.0]), 5).unwrap();
        assert_eq!(run.diverged_at, Some(1));
        assert_eq!(run.trajectory.len(), 1);
        assert!(flow_a(&aug(&[0.0; 4]), 0.1, &Exploding).is_err());
        assert!(rk2_step(&ps(&[0.0, 0.0]), 0.1, &Exploding).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TaoConfig::new(0.0, 0.1).is_err());
        assert!(TaoConfig::new(10.0, -0.1).is_err());
        assert!(Propagator::new(Harmonic, Scheme::Rk2 { dt: 0.0 }).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_bits() {
        let prop = Propagator::new(CherryHamiltonian, Scheme::Tao(TaoConfig::new(10.0, 0.01).unwrap())).unwrap();
        let traj = prop.propagate(&ps(&[0.15, 0.1, -0.05, 0.1]), 50).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,q1,q2,p1,p2\n"));
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(back.states, traj.states);
    }
}
