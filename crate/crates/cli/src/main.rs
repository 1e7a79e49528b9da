use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sympid::dataset::TrajectoryDataset;
use sympid::experiments::{
    error_horizon, fit_map_on, generate_data, learning_skeleton, likelihood_timing, loglog_slope,
    ls_fit_on, omega_sweep, prediction_skeleton, relative_error, run_on_dataset, sample_on,
    ExperimentConfig, Mode,
};
use sympid::inference::{map_trajectory, posterior_predictive_mean, ChainSidecar, ParameterVector, PosteriorChain};
use sympid::{
    CherryHamiltonian, Error, Hamiltonian, HamiltonianModel, PhaseState, Propagator, Result, Scheme,
    TaoConfig, Trajectory,
};

#[derive(Parser)]
#[command(name = "sympid", version, about = "Learn nonseparable Hamiltonian systems from sparse noisy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    SingleIc,
    MultiIc,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults to the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "single-ic")]
    preset: Preset,
    /// Long-run sample counts (2e5 samples, 1e5 burn-in for a single IC).
    #[arg(long, alias = "paper-scale")]
    full_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the true system, or a learned model, from the test IC.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Learned model JSON to integrate instead of the true system.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Use the midpoint RK2 scheme instead of the symplectic one.
        #[arg(long)]
        rk2: bool,
        /// Number of steps; defaults to the prediction horizon.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate noisy observations of the true system.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Least-squares baseline on finite-difference derivatives.
    LsFit {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Maximum a posteriori estimate.
    FitMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "single-ic-symplectic")]
        mode: Mode,
    },
    /// DRAM posterior sampling.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "single-ic-symplectic")]
        mode: Mode,
        /// Starting parameters (JSON); the MAP estimate is computed when absent.
        #[arg(long)]
        start: Option<PathBuf>,
    },
    /// Predict from the test IC with a model, a parameter vector or a chain.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with_all = ["theta", "chain"])]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with = "chain")]
        theta: Option<PathBuf>,
        /// Chain CSV; predicts the posterior mean.
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Leading chain rows to drop.
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        /// Defaults to the config thinning interval.
        #[arg(long)]
        thin: Option<usize>,
    },
    /// Run a full experiment and write the result bundle.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "single-ic-symplectic")]
        mode: Mode,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Likelihood timing and binding-constant sweep.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "20,40,80,160")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100")]
        omegas: Vec<f64>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => 2,
        Error::Divergence { .. }
        | Error::AllSamplesDiverged(_)
        | Error::NonFiniteStart
        | Error::LikelihoodInvalid(_) => 3,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
        Error::Stage { .. } => 1,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml_str(&text)?
        }
        None => match common.preset {
            Preset::SingleIc => ExperimentConfig::single_ic(),
            Preset::MultiIc => ExperimentConfig::multi_ic(),
        },
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.full_scale {
        cfg = cfg.with_full_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(common: &Common) -> Result<ExperimentConfig> {
    let cfg = load_config(common)?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(cfg)
}

fn dataset(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<TrajectoryDataset> {
    match data {
        Some(dir) => TrajectoryDataset::load(dir),
        None => generate_data(cfg).map_err(|e| e.at_stage("generate")),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn truth_at_prediction(cfg: &ExperimentConfig) -> Result<Trajectory> {
    Propagator::new(
        CherryHamiltonian,
        Scheme::Tao(TaoConfig::new(cfg.data.omega, cfg.prediction.dt)?),
    )?
    .propagate(&cfg.data.test_ic()?, cfg.prediction.steps())
}

fn prediction_errors(est: &Trajectory, truth: &Trajectory, cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let n_train = cfg.prediction.train_steps();
    let last = truth.len() - 1;
    // null when the estimate stops inside the window
    let window = |i: usize, j: usize| {
        if i <= j && j < est.len() {
            relative_error(est, truth, i, j).ok()
        } else {
            None
        }
    };
    Ok(json!({
        "train_error": window(1, n_train.min(last)),
        "test_error": window(n_train + 1, (2 * n_train).min(last)),
        "horizon_10pct": error_horizon(est, truth, cfg.prediction.error_threshold)?,
        "steps": est.len() - 1,
    }))
}

fn simulate(common: &Common, model: Option<&Path>, rk2: bool, steps: Option<usize>) -> Result<()> {
    let cfg = prepare(common)?;
    let dt = cfg.prediction.dt;
    let scheme = if rk2 {
        Scheme::Rk2 { dt }
    } else {
        Scheme::Tao(TaoConfig::new(cfg.model.omega, dt)?)
    };
    let steps = steps.unwrap_or_else(|| cfg.prediction.steps());
    let x0 = cfg.data.test_ic()?;
    match model {
        Some(path) => {
            let m = HamiltonianModel::from_json(&std::fs::read_to_string(path)?)?;
            simulate_with(m, scheme, &x0, steps, &common.out)
        }
        None => simulate_with(CherryHamiltonian, scheme, &x0, steps, &common.out),
    }
}

fn simulate_with<H: Hamiltonian + Clone>(
    h: H,
    scheme: Scheme,
    x0: &PhaseState,
    steps: usize,
    out: &Path,
) -> Result<()> {
    let h0 = h.value_at(x0)?;
    let run = Propagator::new(h.clone(), scheme)?.propagate_partial(x0, steps)?;
    run.trajectory.save_csv(&out.join("trajectory.csv"))?;
    let mut drift = 0.0f64;
    for s in &run.trajectory.states {
        drift = drift.max((h.value_at(s)? - h0).abs());
    }
    write_json(
        &out.join("simulate.json"),
        &json!({
            "scheme": scheme,
            "steps": run.trajectory.len() - 1,
            "H_initial": h0,
            "max_energy_error": drift,
            "diverged_at": run.diverged_at,
        }),
    )?;
    match run.diverged_at {
        Some(step) => Err(Error::Divergence { step }),
        None => Ok(()),
    }
}

fn ls_fit(common: &Common, data: Option<&Path>) -> Result<()> {
    let cfg = prepare(common)?;
    let ds = dataset(&cfg, data)?;
    let model = ls_fit_on(&cfg, &ds)?;
    std::fs::write(common.out.join("model_ls.json"), model.to_json()?)?;
    let truth = truth_at_prediction(&cfg)?;
    let theta = ParameterVector::new(model.coefficients().to_vec(), cfg.start.theta_sigma, cfg.start.theta_gamma)?;
    let run = map_trajectory(&theta, &prediction_skeleton(&cfg)?, &cfg.data.test_ic()?, cfg.prediction.steps())?;
    run.trajectory.save_csv(&common.out.join("ls_trajectory.csv"))?;
    write_json(&common.out.join("ls.json"), &prediction_errors(&run.trajectory, &truth, &cfg)?)
}

fn fit_map(common: &Common, data: Option<&Path>, mode: Mode) -> Result<ParameterVector> {
    let cfg = prepare(common)?;
    let ds = dataset(&cfg, data)?;
    let ls = ls_fit_on(&cfg, &ds)?;
    let fit = fit_map_on(&cfg, mode, &ds, &ls)?;
    let skeleton = prediction_skeleton(&cfg)?;
    write_json(&common.out.join("theta_map.json"), &fit.theta)?;
    std::fs::write(
        common.out.join("model_map.json"),
        skeleton.model(&fit.theta.theta_psi)?.to_json()?,
    )?;
    let run = map_trajectory(&fit.theta, &skeleton, &cfg.data.test_ic()?, cfg.prediction.steps())?;
    run.trajectory.save_csv(&common.out.join("map_trajectory.csv"))?;
    let truth = truth_at_prediction(&cfg)?;
    write_json(
        &common.out.join("map.json"),
        &json!({
            "mode": mode,
            "start_kind": fit.start_kind,
            "start_log_posterior": fit.result.start_log_density,
            "map_log_posterior": fit.result.log_density,
            "evaluations": fit.result.evaluations,
            "converged": fit.result.converged,
            "prediction": prediction_errors(&run.trajectory, &truth, &cfg)?,
        }),
    )?;
    Ok(fit.theta)
}

fn sample(common: &Common, data: Option<&Path>, mode: Mode, start: Option<&Path>) -> Result<()> {
    let cfg = prepare(common)?;
    let ds = dataset(&cfg, data)?;
    let init: ParameterVector = match start {
        Some(path) => read_json(path)?,
        None => {
            let ls = ls_fit_on(&cfg, &ds)?;
            fit_map_on(&cfg, mode, &ds, &ls)?.theta
        }
    };
    let skeleton = learning_skeleton(&cfg, mode)?;
    if init.theta_psi.len() != skeleton.n_coefficients() {
        return Err(Error::DimensionMismatch {
            expected: skeleton.n_coefficients(),
            got: init.theta_psi.len(),
        });
    }
    write_json(&common.out.join("theta_start.json"), &init)?;
    let chain = sample_on(&cfg, mode, &ds, &init)?;
    chain.save_csv(&common.out.join("chain.csv"), &ParameterVector::names(&skeleton))?;
    let mcmc = cfg.mcmc.to_mcmc(skeleton.n_coefficients(), cfg.seed);
    write_json(&common.out.join("chain.json"), &ChainSidecar::new(&chain, &mcmc))
}

struct PredictArgs<'a> {
    model: Option<&'a Path>,
    theta: Option<&'a Path>,
    chain: Option<&'a Path>,
    burn_in: usize,
    thin: Option<usize>,
}

fn predict(common: &Common, args: PredictArgs<'_>) -> Result<()> {
    let cfg = prepare(common)?;
    let x0 = cfg.data.test_ic()?;
    let n = cfg.prediction.steps();
    let skeleton = prediction_skeleton(&cfg)?;
    let mut extra = json!({});
    let trajectory = if let Some(path) = args.chain {
        let mut chain = PosteriorChain::read_csv(path)?;
        if args.burn_in >= chain.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} leaves no samples out of {}",
                args.burn_in,
                chain.samples.len()
            )));
        }
        chain.burn_in = args.burn_in;
        let thin = args.thin.unwrap_or(cfg.prediction.thin);
        let pred = posterior_predictive_mean(&chain, &skeleton, &x0, n, thin)?;
        extra = json!({ "ensemble_size": pred.ensemble.len(), "diverged_sample_count": pred.diverged });
        pred.mean
    } else {
        let run = if let Some(path) = args.model {
            let model = HamiltonianModel::from_json(&std::fs::read_to_string(path)?)?;
            Propagator::new(model, skeleton.scheme)?.propagate_partial(&x0, n)?
        } else if let Some(path) = args.theta {
            let theta: ParameterVector = read_json(path)?;
            map_trajectory(&theta, &skeleton, &x0, n)?
        } else {
            return Err(Error::InvalidArgument("predict needs --model, --theta or --chain".into()));
        };
        extra = json!({ "diverged_at": run.diverged_at });
        run.trajectory
    };
    trajectory.save_csv(&common.out.join("prediction.csv"))?;
    let truth = truth_at_prediction(&cfg)?;
    let mut summary = prediction_errors(&trajectory, &truth, &cfg)?;
    if let (Some(s), Some(e)) = (summary.as_object_mut(), extra.as_object()) {
        s.extend(e.clone());
    }
    write_json(&common.out.join("predict.json"), &summary)?;
    if trajectory.len() <= n {
        return Err(Error::Divergence {
            step: trajectory.len(),
        });
    }
    Ok(())
}

fn evaluate(common: &Common, mode: Mode, data: Option<&Path>) -> Result<()> {
    let cfg = prepare(common)?;
    let ds = dataset(&cfg, data)?;
    let result = run_on_dataset(&cfg, mode, ds)?;
    result.write(&common.out)?;
    println!("{}", serde_json::to_string_pretty(&result.metrics)?);
    Ok(())
}

fn bench(common: &Common, sizes: &[usize], repeats: usize, omegas: &[f64]) -> Result<()> {
    let cfg = prepare(common)?;
    let timing = likelihood_timing(&cfg, sizes, repeats)?;
    let points: Vec<(f64, f64)> = timing
        .iter()
        .map(|t| (t.n_observations as f64, t.seconds))
        .collect();
    let slope = loglog_slope(&points)?;
    let sweep = omega_sweep(&cfg, omegas)?;
    let report = json!({ "likelihood_timing": timing, "loglog_slope": slope, "omega_sweep": sweep });
    write_json(&common.out.join("bench.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, model, rk2, steps } => simulate(&common, model.as_deref(), rk2, steps),
        Command::GenerateData { common } => {
            let cfg = prepare(&common)?;
            generate_data(&cfg)?.save(&common.out.join("data"))
        }
        Command::LsFit { common, data } => ls_fit(&common, data.as_deref()),
        Command::FitMap { common, data, mode } => fit_map(&common, data.as_deref(), mode).map(|_| ()),
        Command::Sample { common, data, mode, start } => sample(&common, data.as_deref(), mode, start.as_deref()),
        Command::Predict { common, model, theta, chain, burn_in, thin } => predict(
            &common,
            PredictArgs {
                model: model.as_deref(),
                theta: theta.as_deref(),
                chain: chain.as_deref(),
                burn_in,
                thin,
            },
        ),
        Command::Evaluate { common, mode, data } => evaluate(&common, mode, data.as_deref()),
        Command::Bench { common, sizes, repeats, omegas } => bench(&common, &sizes, repeats, &omegas),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
