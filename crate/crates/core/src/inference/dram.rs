//! Delayed-rejection adaptive Metropolis.
//!
//! Stage one is a Gaussian random walk with covariance `C`. When it rejects,
//! a second proposal is drawn from `N(x, γC)` (or `N(x, γ²C)`, see
//! [`SecondStageScaling`]) and accepted with the delayed-rejection ratio that
//! keeps the chain reversible. From `adapt_start` samples on,
//! `C = s_d·Cov(history) + εI`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LogDensity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalInit {
    /// `s·I`.
    Scalar(f64),
    Diagonal(Vec<f64>),
    /// Row-major dense covariance.
    Dense(Vec<Vec<f64>>),
}

impl ProposalInit {
    fn matrix(&self, d: usize) -> Result<DMatrix<f64>> {
        match self {
            ProposalInit::Scalar(s) => Ok(DMatrix::from_diagonal_element(d, d, *s)),
            ProposalInit::Diagonal(v) if v.len() == d => {
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
            }
            ProposalInit::Dense(rows) if rows.len() == d && rows.iter().all(|r| r.len() == d) => {
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
            _ => Err(Error::invalid("initial proposal covariance has wrong dimension")),
        }
    }
}

/// How the second-stage proposal is shrunk relative to the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondStageScaling {
    /// Covariance multiplied by `γ`.
    Covariance,
    /// Standard deviation multiplied by `γ` (covariance by `γ²`).
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub adapt_start: usize,
    /// `γ`.
    pub dr_scale: f64,
    pub second_stage: SecondStageScaling,
    /// `ε`, added to the adapted covariance diagonal.
    pub jitter: f64,
    pub init_proposal_cov: ProposalInit,
    pub rng_seed: u64,
    pub adapt: bool,
    pub delayed_rejection: bool,
    /// `s_d`; defaults to `2.4²/d`.
    pub adapt_scale: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            burn_in: 10_000,
            adapt_start: 200,
            dr_scale: 0.01,
            second_stage: SecondStageScaling::Covariance,
            jitter: 1e-10,
            init_proposal_cov: ProposalInit::Scalar(1e-4),
            rng_seed: 0,
            adapt: true,
            delayed_rejection: true,
            adapt_scale: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        if self.burn_in >= self.n_samples {
            return Err(Error::invalid("burn_in must be smaller than n_samples"));
        }
        if !(self.dr_scale > 0.0 && self.dr_scale < 1.0) {
            return Err(Error::invalid("dr_scale must be in (0, 1)"));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::invalid("jitter must be positive"));
        }
        Ok(())
    }

    fn second_stage_factor(&self) -> f64 {
        match self.second_stage {
            SecondStageScaling::Covariance => self.dr_scale,
            SecondStageScaling::StdDev => self.dr_scale * self.dr_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    /// One row per iteration, `n_samples` rows.
    pub samples: Vec<Vec<f64>>,
    pub log_posts: Vec<f64>,
    pub burn_in: usize,
    pub acceptance_rate: f64,
    pub first_stage_accepts: usize,
    pub second_stage_accepts: usize,
    pub evaluations: usize,
    /// Highest-density state visited (including the initial state).
    pub map_point: Vec<f64>,
    pub map_log_post: f64,
    /// Proposal covariance in force after the final iteration.
    pub final_proposal_cov: DMatrix<f64>,
}

impl PosteriorChain {
    /// Samples after burn-in.
    pub fn retained(&self) -> &[Vec<f64>] {
        &self.samples[self.burn_in..]
    }

    pub fn retained_log_posts(&self) -> &[f64] {
        &self.log_posts[self.burn_in..]
    }

    /// Chain with a single state, e.g. a point estimate.
    pub fn degenerate(point: Vec<f64>, log_post: f64) -> Self {
        let d = point.len();
        Self {
            samples: vec![point.clone()],
            log_posts: vec![log_post],
            burn_in: 0,
            acceptance_rate: 0.0,
            first_stage_accepts: 0,
            second_stage_accepts: 0,
            evaluations: 0,
            map_point: point,
            map_log_post: log_post,
            final_proposal_cov: DMatrix::zeros(d, d),
        }
    }

    /// Retained samples as CSV: one column per name plus `log_post`.
    pub fn write_csv<W: Write>(&self, w: W, names: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
        header.push("log_post");
        wtr.write_record(&header)?;
        for (x, lp) in self.retained().iter().zip(self.retained_log_posts()) {
            let mut row: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
            row.push(format!("{lp:.16e}"));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), names)
    }

    /// Reads retained samples back; burn-in is zero in the result.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut samples = Vec::new();
        let mut log_posts = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
            let (x, lp) = vals.split_at(vals.len() - 1);
            samples.push(x.to_vec());
            log_posts.push(lp[0]);
        }
        if samples.is_empty() {
            return Err(Error::invalid(format!("{} holds no samples", path.display())));
        }
        let (best, &map_log_post) = log_posts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let d = samples[0].len();
        Ok(Self {
            map_point: samples[best].clone(),
            samples,
            log_posts,
            burn_in: 0,
            acceptance_rate: f64::NAN,
            first_stage_accepts: 0,
            second_stage_accepts: 0,
            evaluations: 0,
            map_log_post,
            final_proposal_cov: DMatrix::zeros(d, d),
        })
    }
}

/// JSON sidecar written next to a chain CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSidecar {
    pub config: McmcConfig,
    pub seed: u64,
    pub acceptance_rate: f64,
    pub first_stage_accepts: usize,
    pub second_stage_accepts: usize,
    pub retained_samples: usize,
    pub map_log_post: f64,
}

impl ChainSidecar {
    pub fn new(chain: &PosteriorChain, config: &McmcConfig) -> Self {
        Self {
            config: config.clone(),
            seed: config.rng_seed,
            acceptance_rate: chain.acceptance_rate,
            first_stage_accepts: chain.first_stage_accepts,
            second_stage_accepts: chain.second_stage_accepts,
            retained_samples: chain.retained().len(),
            map_log_post: chain.map_log_post,
        }
    }
}

/// `log min(1, π(y)/π(x))` for a symmetric proposal.
pub fn first_stage_log_ratio(log_x: f64, log_y: f64) -> f64 {
    if log_y == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    (log_y - log_x).min(0.0)
}

/// `log(1 − exp(a))` for `a ≤ 0`.
fn log1m_exp(a: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        0.0
    } else if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// Running mean and scatter of the chain history.
struct RunningMoments {
    count: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl RunningMoments {
    fn new(d: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(d),
            scatter: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = x - &self.mean;
        self.scatter.ger(1.0, &delta, &delta2, 1.0);
    }

    fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.scatter / (self.count.max(2) - 1) as f64;
        let c2 = c.transpose();
        c += c2;
        c * 0.5
    }
}

/// Mahalanobis term `(b−a)ᵀC⁻¹(b−a)` through the Cholesky factor of `C`.
fn mahalanobis(chol_l: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    chol_l
        .solve_lower_triangular(&(b - a))
        .map_or(f64::INFINITY, |z| z.norm_squared())
}

/// Runs the sampler from `init`, which must have finite log-density.
pub fn dram_sample(
    target: &dyn LogDensity,
    init: &[f64],
    cfg: &McmcConfig,
) -> Result<PosteriorChain> {
    cfg.validate()?;
    let d = target.dim();
    if init.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: init.len(),
        });
    }
    let sanitize = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut log_x = sanitize(target.log_density(init));
    if !log_x.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let mut evaluations = 1;

    let mut cov = cfg.init_proposal_cov.matrix(d)?;
    let mut chol_l = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::invalid("initial proposal covariance is not positive definite"))?
        .l();
    let second = cfg.second_stage_factor();
    let adapt_scale = cfg.adapt_scale.unwrap_or(2.4 * 2.4 / d as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let draw = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
    };

    let mut x = DVector::from_column_slice(init);
    let mut moments = RunningMoments::new(d);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut log_posts = Vec::with_capacity(cfg.n_samples);
    let (mut acc1, mut acc2) = (0usize, 0usize);
    let mut map_point = init.to_vec();
    let mut map_log_post = log_x;

    for i in 0..cfg.n_samples {
        let y1 = &x + &chol_l * draw(&mut rng);
        let log_y1 = sanitize(target.log_density(y1.as_slice()));
        evaluations += 1;
        let a1 = first_stage_log_ratio(log_x, log_y1);
        let u: f64 = rng.gen();
        if u.ln() < a1 {
            x = y1;
            log_x = log_y1;
            acc1 += 1;
        } else if cfg.delayed_rejection {
            let y2 = &x + (&chol_l * draw(&mut rng)) * second.sqrt();
            let log_y2 = sanitize(target.log_density(y2.as_slice()));
            evaluations += 1;
            if log_y2.is_finite() {
                let a1_rev = first_stage_log_ratio(log_y2, log_y1);
                let num = log_y2 - 0.5 * mahalanobis(&chol_l, &y2, &y1) + log1m_exp(a1_rev);
                let den = log_x - 0.5 * mahalanobis(&chol_l, &x, &y1) + log1m_exp(a1);
                let a2 = (num - den).min(0.0);
                let u2: f64 = rng.gen();
                if a2.is_finite() && u2.ln() < a2 {
                    x = y2;
                    log_x = log_y2;
                    acc2 += 1;
                }
            }
        }

        if log_x > map_log_post {
            map_log_post = log_x;
            map_point = x.as_slice().to_vec();
        }
        moments.push(&x);
        samples.push(x.as_slice().to_vec());
        log_posts.push(log_x);

        if cfg.adapt && i + 1 >= cfg.adapt_start && moments.count >= 2 {
            let mut candidate = moments.covariance() * adapt_scale;
            for k in 0..d {
                candidate[(k, k)] += cfg.jitter;
            }
            if let Some(c) = Cholesky::new(candidate.clone()) {
                cov = candidate;
                chol_l = c.l();
            }
        }
    }

    Ok(PosteriorChain {
        samples,
        log_posts,
        burn_in: cfg.burn_in,
        acceptance_rate: (acc1 + acc2) as f64 / cfg.n_samples as f64,
        first_stage_accepts: acc1,
        second_stage_accepts: acc2,
        evaluations,
        map_point,
        map_log_post,
        final_proposal_cov: cov,
    })
}
