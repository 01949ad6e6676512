//! `noisecal` command line. Exit codes: 0 success, 2 configuration or input
//! error, 3 numerical failure, 4 failed check.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use noisecal_core::grad_reverse::PriorAdjointForm;
use noisecal_core::optimizer::{evaluate, Termination};
use noisecal_core::{calibrate, CovParam, SystemModel, Vector};

use crate::bench::{bench_modes, BenchConfig};
use crate::config::{Config, ConfigError, LossKind, Mode, ParamKind};
use crate::gradcheck;
use crate::io::{self, IoError, IterationRow, Manifest, ReportFile};
use crate::montecarlo::{monte_carlo, Method};
use crate::sim::{self, derive_seed, Dataset, Stream, POS_DIM};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "noisecal",
    version,
    about = "Maximum-likelihood noise covariance calibration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate calibration and test data with supervision.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit R(θ) on the calibration data.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Defaults to reverse for cholesky, forward otherwise.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, value_enum)]
        param: Option<ParamKind>,
        #[arg(long, value_enum)]
        loss: Option<LossKind>,
        #[arg(long)]
        itermax: Option<usize>,
        /// Fixed step size without line search.
        #[arg(long)]
        fixed_step: Option<f64>,
    },
    /// Test-trajectory position RMSE of a calibration report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "out/report.json")]
        report: PathBuf,
    },
    /// Compare gradient modes, finite differences and the joint likelihood.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, value_enum)]
        param: Option<ParamKind>,
        /// Largest window for the likelihood comparison.
        #[arg(long, default_value_t = 40)]
        window: usize,
        /// Use the incorrect S⁻¹ form of the prior covariance adjoint.
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Monte-Carlo comparison of all methods.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        itermax: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "montecarlo")]
        out: PathBuf,
    },
    /// Gradient cost against parameter count and horizon.
    Bench {
        #[arg(long, default_value = "bench")]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [100, 400, 1600])]
        horizons: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Check(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Numerical(_) => EXIT_NUMERICAL,
            Failure::Check(_) => EXIT_CHECK,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Check(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<noisecal_core::Error> for Failure {
    fn from(e: noisecal_core::Error) -> Self {
        Failure::Numerical(e.to_string())
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))
}

fn file(dir: &Path, name: &str) -> Result<fs::File, Failure> {
    let path = dir.join(name);
    fs::File::create(&path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn model_of(cfg: &Config, traj: &sim::Trajectory) -> SystemModel {
    sim::cv_model(traj, cfg.system.dt, cfg.system.p0_scale)
}

fn simulate(cfg: &Config, out: &Path) -> Result<(), Failure> {
    let s = cfg.sim();
    let calib = Dataset::simulate(
        &s,
        s.n_calib,
        cfg.system.p0_scale,
        derive_seed(s.seed, 0, Stream::CalibTrajectory),
        derive_seed(s.seed, 0, Stream::CalibPrimary),
    );
    let test = Dataset::simulate(
        &s,
        s.n_test,
        cfg.system.p0_scale,
        derive_seed(s.seed, 0, Stream::TestTrajectory),
        derive_seed(s.seed, 0, Stream::TestPrimary),
    );
    let sup = sim::generate_supervisory(
        &calib.traj,
        s.downsample,
        s.threshold,
        s.alpha,
        derive_seed(s.seed, 0, Stream::CalibSupervisory),
    );
    let (states, pairs) = sup.counts();
    let manifest = Manifest {
        seed: s.seed,
        dt: s.dt,
        calib_x0: calib.traj.x0.iter().copied().collect(),
        test_x0: test.traj.x0.iter().copied().collect(),
        r_true: io::rows(&s.r_true.matrix()),
        supervised_states: states,
        supervisory_pairs: pairs,
        measurement_rmse: sim::measurement_rmse(&calib.traj, &calib.ys),
    };
    io::write_data_dir(
        out,
        &manifest,
        (&calib.traj, &calib.ys),
        (&test.traj, &test.ys),
        &sup,
    )?;
    println!(
        "wrote {} calibration and {} test steps to {}; supervision {states} states, {pairs} pairs; measurement RMSE {:.3} m",
        calib.ys.len(),
        test.ys.len(),
        out.display(),
        manifest.measurement_rmse
    );
    Ok(())
}

fn termination_name(t: &Termination) -> String {
    match t {
        Termination::MaxIterations => "max-iterations".into(),
        Termination::GradientTolerance => "gradient-tolerance".into(),
        Termination::LineSearchStalled => "line-search-stalled".into(),
        Termination::NonFinite { iteration, error } => {
            format!("non-finite at iteration {iteration}: {error}")
        }
    }
}

fn run_calibrate(cfg: &Config, data: &Path, out: &Path) -> Result<(), Failure> {
    let dir = io::read_data_dir(data)?;
    let model = model_of(cfg, &dir.calib.0);
    let param = cfg.param();
    let opt = cfg.calibration();
    let report = calibrate(
        &model,
        &dir.spec,
        &dir.calib.1,
        &param,
        &param.default_theta(),
        &opt,
    )?;
    let rows: Vec<IterationRow> = report
        .history
        .iter()
        .map(|r| IterationRow {
            loss: r.loss,
            ell_o: r.ell_o,
            ell_s: r.ell_s,
            grad_norm: r.grad_norm,
            step: r.step,
            wall_time: r.wall_time,
        })
        .collect();
    let file = ReportFile {
        param: cfg.parameterization.kind,
        mode: cfg.parameterization.mode(),
        loss: cfg.parameterization.loss,
        theta_hat: report.theta_hat.iter().copied().collect(),
        r_hat: io::rows(&param.eval_r(&report.theta_hat)?),
        final_loss: report.final_loss,
        termination: termination_name(&report.termination),
        iterations: rows,
    };
    create_dir(out)?;
    io::write_json(&out.join("report.json"), &file)?;
    io::write_history_csv(&out.join("loss_history.csv"), &file.iterations)?;
    println!(
        "{}({}) {} loss: {} iterations, final loss {:.6}, {}",
        file.param.name(),
        file.mode.tag(),
        file.loss.name(),
        file.iterations.len(),
        file.final_loss,
        file.termination
    );
    println!("theta_hat = {:?}", file.theta_hat);
    if let Termination::NonFinite { .. } = report.termination {
        return Err(Failure::Numerical(file.termination));
    }
    Ok(())
}

fn run_evaluate(cfg: &Config, data: &Path, report: &Path) -> Result<(), Failure> {
    let dir = io::read_data_dir(data)?;
    let rep: ReportFile = io::read_json(report)?;
    let param = rep.param.build(POS_DIM, cfg.fixed_q())?;
    let theta = Vector::from_vec(rep.theta_hat.clone());
    let model = model_of(cfg, &dir.test.0);
    let rmse = evaluate(
        &model,
        &dir.test.1,
        &dir.test.0.states,
        &param,
        &theta,
        0..POS_DIM,
    )?;
    let raw = sim::measurement_rmse(&dir.test.0, &dir.test.1);
    println!("test position RMSE {rmse:.6} m (raw measurements {raw:.6} m)");
    Ok(())
}

fn run_gradcheck(cfg: &Config, data: &Path, window: usize, corrupt: bool) -> Result<(), Failure> {
    let dir = io::read_data_dir(data)?;
    let model = model_of(cfg, &dir.calib.0);
    let param: CovParam = cfg.param();
    // off the default point so every coordinate carries signal
    let theta = param.default_theta().map(|t| t + 0.1);
    let form = if corrupt {
        PriorAdjointForm::InnovationInverse
    } else {
        PriorAdjointForm::Printed
    };
    let report = gradcheck::gradcheck(
        &model,
        &dir.spec,
        &dir.calib.1,
        &param,
        &theta,
        gradcheck::Options { window, form },
    )?;
    println!("likelihood window: {} steps", report.window);
    for c in &report.checks {
        println!("{c}");
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check("gradient check failed".into()))
    }
}

fn run_montecarlo(cfg: &Config, out: &Path) -> Result<(), Failure> {
    let methods = Method::standard();
    let study = monte_carlo(cfg, &methods);
    create_dir(out)?;
    let csv_err = |e: csv::Error| Failure::Config(e.to_string());
    study
        .write_summary_csv(file(out, "summary.csv")?)
        .map_err(csv_err)?;
    study
        .write_trials_csv(file(out, "trials.csv")?)
        .map_err(csv_err)?;
    let ((ss, sp), (ds, dp)) = study.mean_counts();
    println!(
        "{} trials; mean supervision L- ({ss:.1}, {sp:.1}), L+ ({ds:.1}, {dp:.1})",
        study.trials.len()
    );
    println!(
        "{:<18} {:>10} {:>10} {:>10} {:>6}",
        "method", "mean RMSE", "std err", "R error", "failed"
    );
    for s in &study.summary {
        println!(
            "{:<18} {:>10.5} {:>10.5} {:>10.4} {:>6}",
            s.method.to_string(),
            s.mean_rmse,
            s.se_rmse,
            s.mean_recovery,
            s.failed
        );
    }
    if study.summary.iter().all(|s| s.ok == 0) {
        return Err(Failure::Numerical("every trial failed".into()));
    }
    Ok(())
}

fn run_bench(cfg: BenchConfig, out: &Path) -> Result<(), Failure> {
    let rows = bench_modes(&cfg);
    create_dir(out)?;
    crate::bench::write_csv(&rows, file(out, "bench.csv")?)
        .map_err(|e| Failure::Config(e.to_string()))?;
    println!(
        "{:>3} {:>6} {:>8} {:>14} {:>10}",
        "p", "N", "mode", "median s", "retained"
    );
    for r in &rows {
        let retained = r.retained.map_or(String::from("-"), |v| v.to_string());
        println!(
            "{:>3} {:>6} {:>8} {:>14.6e} {:>10}",
            r.p,
            r.n,
            format!("{:?}", r.mode).to_lowercase(),
            r.median_seconds,
            retained
        );
    }
    Ok(())
}

fn load(common: &Common) -> Result<Config, Failure> {
    Ok(Config::load_or_default(common.config.as_deref())?)
}

fn revalidate(cfg: Config) -> Result<Config, Failure> {
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common, out, seed } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            simulate(&revalidate(cfg)?, &out)
        }
        Command::Calibrate {
            common,
            data,
            out,
            mode,
            param,
            loss,
            itermax,
            fixed_step,
        } => {
            let mut cfg = load(&common)?;
            if let Some(p) = param {
                cfg.parameterization.kind = p;
                cfg.parameterization.mode = None;
            }
            if mode.is_some() {
                cfg.parameterization.mode = mode;
            }
            if let Some(l) = loss {
                cfg.parameterization.loss = l;
            }
            if let Some(n) = itermax {
                cfg.optimizer.itermax = n;
            }
            if let Some(eta) = fixed_step {
                cfg.optimizer.eta0 = eta;
                cfg.optimizer.line_search = false;
            }
            run_calibrate(&revalidate(cfg)?, &data, &out)
        }
        Command::Evaluate {
            common,
            data,
            report,
        } => run_evaluate(&load(&common)?, &data, &report),
        Command::Gradcheck {
            common,
            data,
            param,
            window,
            corrupt_adjoint,
        } => {
            let mut cfg = load(&common)?;
            if let Some(p) = param {
                cfg.parameterization.kind = p;
            }
            run_gradcheck(&cfg, &data, window, corrupt_adjoint)
        }
        Command::Montecarlo {
            common,
            trials,
            seed,
            itermax,
            workers,
            out,
        } => {
            let mut cfg = load(&common)?;
            if let Some(t) = trials {
                cfg.simulation.trials = t;
            }
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            if let Some(n) = itermax {
                cfg.optimizer.itermax = n;
            }
            if let Some(w) = workers {
                cfg.simulation.workers = w;
            }
            run_montecarlo(&revalidate(cfg)?, &out)
        }
        Command::Bench {
            out,
            repeats,
            horizons,
            seed,
        } => run_bench(
            BenchConfig {
                repeats,
                horizons,
                seed,
                ..BenchConfig::default()
            },
            &out,
        ),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}
