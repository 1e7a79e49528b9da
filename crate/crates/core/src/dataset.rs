//! Observed trajectories and the noise models used to corrupt them.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::PhaseState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `y = x + σ·z`, `z ~ N(0, 1)` per entry.
    AdditiveGaussian(f64),
    /// `y = x·(1 + u)`, `u ~ U[−ρ, ρ]` per entry.
    RelativeUniform(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none(seed: u64) -> Self {
        Self {
            kind: NoiseKind::AdditiveGaussian(0.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::AdditiveGaussian(s) if s >= 0.0 && s.is_finite() => Ok(()),
            NoiseKind::RelativeUniform(r) if (0.0..1.0).contains(&r) => Ok(()),
            NoiseKind::AdditiveGaussian(s) => {
                Err(Error::invalid(format!("Gaussian noise level must be >= 0, got {s}")))
            }
            NoiseKind::RelativeUniform(r) => Err(Error::invalid(format!(
                "relative noise level must be in [0, 1), got {r}"
            ))),
        }
    }

    /// Corrupts one entry.
    pub fn perturb<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::AdditiveGaussian(s) if s == 0.0 => x,
            NoiseKind::AdditiveGaussian(s) => {
                x + s * Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
            }
            NoiseKind::RelativeUniform(r) if r == 0.0 => x,
            NoiseKind::RelativeUniform(r) => x * (1.0 + Uniform::new_inclusive(-r, r).sample(rng)),
        }
    }
}

/// Noisy measurements of one trajectory on a uniform grid, including the
/// initial time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedTrajectory {
    pub initial_condition: PhaseState,
    pub times: Vec<f64>,
    /// One row per time, each row `[q, p]`.
    pub observations: Vec<Vec<f64>>,
    /// Noise-free states at the observation times.
    pub clean: Vec<Vec<f64>>,
    pub noise: NoiseSpec,
}

impl ObservedTrajectory {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.observations.len() {
            return Err(Error::invalid(format!(
                "{} times but {} observations",
                self.times.len(),
                self.observations.len()
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("observation times must increase strictly"));
        }
        if let Some(h) = self.spacing() {
            let uniform = self
                .times
                .windows(2)
                .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.max(1.0));
            if !uniform {
                return Err(Error::invalid("observation times must be uniformly spaced"));
            }
        }
        let width = 2 * self.initial_condition.dof();
        if let Some(row) = self.observations.iter().find(|r| r.len() != width) {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: row.len(),
            });
        }
        Ok(())
    }

    /// Number of observations after the initial one.
    pub fn n(&self) -> usize {
        self.observations.len().saturating_sub(1)
    }

    pub fn spacing(&self) -> Option<f64> {
        (self.times.len() > 1).then(|| self.times[1] - self.times[0])
    }

    pub fn observed_states(&self) -> Result<Vec<PhaseState>> {
        self.observations.iter().map(|r| PhaseState::from_slice(r)).collect()
    }

    /// Observations in the trajectory CSV layout.
    pub fn write_csv<W: std::io::Write>(&self, w: W, rows: &[Vec<f64>]) -> Result<()> {
        let d = self.initial_condition.dof();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|j| format!("q{j}")));
        header.extend((1..=d).map(|j| format!("p{j}")));
        wtr.write_record(&header)?;
        for (t, row) in self.times.iter().zip(rows) {
            let mut rec = vec![format!("{t:.16e}")];
            rec.extend(row.iter().map(|v| format!("{v:.16e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A set of observed trajectories sharing one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<ObservedTrajectory>,
}

/// JSON manifest written next to the per-trajectory CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub trajectories: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub observations_csv: String,
    pub clean_csv: String,
    pub initial_condition: PhaseState,
    pub noise: NoiseSpec,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Writes `traj_<m>.csv`, `traj_<m>_clean.csv` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (m, tr) in self.trajectories.iter().enumerate() {
            let obs_name = format!("traj_{m}.csv");
            let clean_name = format!("traj_{m}_clean.csv");
            tr.write_csv(std::fs::File::create(dir.join(&obs_name))?, &tr.observations)?;
            tr.write_csv(std::fs::File::create(dir.join(&clean_name))?, &tr.clean)?;
            entries.push(ManifestEntry {
                observations_csv: obs_name,
                clean_csv: clean_name,
                initial_condition: tr.initial_condition.clone(),
                noise: tr.noise,
            });
        }
        let manifest = DatasetManifest { trajectories: entries };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut trajectories = Vec::new();
        for e in manifest.trajectories {
            let (times, observations) = read_rows(&dir.join(&e.observations_csv))?;
            let (_, clean) = read_rows(&dir.join(&e.clean_csv))?;
            let tr = ObservedTrajectory {
                initial_condition: e.initial_condition,
                times,
                observations,
                clean,
                noise: e.noise,
            };
            tr.validate()?;
            trajectories.push(tr);
        }
        Ok(Self { trajectories })
    }
}

fn read_rows(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    Ok((times, rows))
}
