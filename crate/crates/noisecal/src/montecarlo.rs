//! Monte-Carlo comparison of calibration methods on fresh data per trial.

use std::fmt;
use std::io::Write;

use noisecal_core::optimizer::{evaluate, Termination};
use noisecal_core::{calibrate, CalibrationConfig, Mat, SupervisorySpec, Vector};
use rayon::prelude::*;

use crate::config::{Config, Mode, ParamKind};
use crate::sim::{derive_seed, generate_supervisory, Dataset, Stream, POS_DIM};

/// How much supervision a method sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    /// `ℓᵒ` only.
    Primary,
    /// Full loss with the sparse supervision setting.
    Sparse,
    /// Full loss with the default supervision setting.
    Dense,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Primary, Level::Sparse, Level::Dense];

    pub fn tag(self) -> &'static str {
        match self {
            Level::Primary => "lo",
            Level::Sparse => "L-",
            Level::Dense => "L+",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// `R = I` without calibration.
    Untuned,
    Tuned {
        kind: ParamKind,
        mode: Mode,
        level: Level,
    },
}

impl Method {
    pub fn tuned(kind: ParamKind, level: Level) -> Self {
        Method::Tuned {
            kind,
            mode: kind.default_mode(),
            level,
        }
    }

    /// The untuned baseline and every kind at every supervision level.
    pub fn standard() -> Vec<Method> {
        let mut all = vec![Method::Untuned];
        for kind in ParamKind::ALL {
            all.extend(Level::ALL.iter().map(|&level| Method::tuned(kind, level)));
        }
        all
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Untuned => write!(f, "untuned"),
            Method::Tuned { kind, mode, level } => {
                write!(f, "{}({}) {}", kind.name(), mode.tag(), level.tag())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub method: Method,
    /// Test position RMSE, or why the method failed in this trial.
    pub rmse: Result<f64, String>,
    pub r_hat: Mat,
    /// `‖R̂ − R_true‖_F / ‖R_true‖_F`.
    pub recovery: f64,
    pub loss_history: Vec<f64>,
    pub termination: Option<Termination>,
}

#[derive(Clone, Debug)]
pub struct Trial {
    pub index: usize,
    /// `(supervised states, pairs)` of the sparse and dense settings.
    pub sparse_counts: (usize, usize),
    pub dense_counts: (usize, usize),
    pub outcomes: Vec<Outcome>,
}

#[derive(Clone, Debug)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_rmse: f64,
    /// Standard error of the mean.
    pub se_rmse: f64,
    pub mean_recovery: f64,
    pub ok: usize,
    pub failed: usize,
}

#[derive(Clone, Debug)]
pub struct Study {
    pub trials: Vec<Trial>,
    pub summary: Vec<MethodSummary>,
}

impl Study {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn mean_counts(&self) -> ((f64, f64), (f64, f64)) {
        let n = self.trials.len().max(1) as f64;
        let mean = |f: &dyn Fn(&Trial) -> (usize, usize)| {
            let (a, b) = self
                .trials
                .iter()
                .map(f)
                .fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
            (a as f64 / n, b as f64 / n)
        };
        (mean(&|t| t.sparse_counts), mean(&|t| t.dense_counts))
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "mean_rmse",
            "se_rmse",
            "mean_recovery",
            "ok",
            "failed",
        ])?;
        for s in &self.summary {
            w.write_record([
                s.method.to_string(),
                s.mean_rmse.to_string(),
                s.se_rmse.to_string(),
                s.mean_recovery.to_string(),
                s.ok.to_string(),
                s.failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trials_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "trial",
            "method",
            "rmse",
            "recovery",
            "iterations",
            "final_loss",
            "sparse_states",
            "sparse_pairs",
            "dense_states",
            "dense_pairs",
            "error",
        ])?;
        for t in &self.trials {
            for o in &t.outcomes {
                let (rmse, error) = match &o.rmse {
                    Ok(v) => (v.to_string(), String::new()),
                    Err(e) => (String::new(), e.clone()),
                };
                w.write_record([
                    t.index.to_string(),
                    o.method.to_string(),
                    rmse,
                    o.recovery.to_string(),
                    o.loss_history.len().to_string(),
                    o.loss_history.last().map_or(String::new(), f64::to_string),
                    t.sparse_counts.0.to_string(),
                    t.sparse_counts.1.to_string(),
                    t.dense_counts.0.to_string(),
                    t.dense_counts.1.to_string(),
                    error,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn run_method(
    method: Method,
    cfg: &Config,
    calib: &Dataset,
    test: &Dataset,
    sparse: &SupervisorySpec,
    dense: &SupervisorySpec,
    r_true: &Mat,
) -> Outcome {
    let q = cfg.fixed_q();
    let (param, theta, loss_history, termination) = match method {
        Method::Untuned => {
            let param = ParamKind::Isotropic.build(POS_DIM, q).expect("valid");
            (param, Vector::zeros(1), Vec::new(), None)
        }
        Method::Tuned { kind, mode, level } => {
            let param = kind.build(POS_DIM, q).expect("valid");
            let (spec, weights) = match level {
                Level::Primary => (
                    &SupervisorySpec::empty(),
                    noisecal_core::LossWeights::PRIMARY_ONLY,
                ),
                Level::Sparse => (sparse, noisecal_core::LossWeights::FULL),
                Level::Dense => (dense, noisecal_core::LossWeights::FULL),
            };
            let opt = CalibrationConfig {
                mode: mode.into(),
                loss_weights: weights,
                ..cfg.calibration()
            };
            match calibrate(
                &calib.model,
                spec,
                &calib.ys,
                &param,
                &param.default_theta(),
                &opt,
            ) {
                Ok(rep) => {
                    let history = rep.loss_history();
                    (param, rep.theta_hat, history, Some(rep.termination))
                }
                Err(e) => {
                    return Outcome {
                        method,
                        rmse: Err(e.to_string()),
                        r_hat: Mat::zeros(POS_DIM, POS_DIM),
                        recovery: f64::NAN,
                        loss_history: Vec::new(),
                        termination: None,
                    }
                }
            }
        }
    };
    let r_hat = param
        .eval_r(&theta)
        .unwrap_or_else(|_| Mat::from_element(POS_DIM, POS_DIM, f64::NAN));
    let recovery = (&r_hat - r_true).norm() / r_true.norm();
    let mut rmse = evaluate(
        &test.model,
        &test.ys,
        &test.traj.states,
        &param,
        &theta,
        0..POS_DIM,
    )
    .map_err(|e| e.to_string());
    if let Some(Termination::NonFinite { error, .. }) = &termination {
        rmse = Err(error.to_string());
    }
    Outcome {
        method,
        rmse,
        r_hat,
        recovery,
        loss_history,
        termination,
    }
}

/// One trial: fresh calibration and test data from seeds derived from the
/// study seed and `index`.
pub fn run_trial(cfg: &Config, methods: &[Method], index: usize) -> Trial {
    let sim = cfg.sim();
    let seed = sim.seed;
    let t = index as u64;
    let p0 = cfg.system.p0_scale;
    let calib = Dataset::simulate(
        &sim,
        sim.n_calib,
        p0,
        derive_seed(seed, t, Stream::CalibTrajectory),
        derive_seed(seed, t, Stream::CalibPrimary),
    );
    let test = Dataset::simulate(
        &sim,
        sim.n_test,
        p0,
        derive_seed(seed, t, Stream::TestTrajectory),
        derive_seed(seed, t, Stream::TestPrimary),
    );
    let sup = &cfg.supervisory;
    let sup_seed = derive_seed(seed, t, Stream::CalibSupervisory);
    let dense = generate_supervisory(
        &calib.traj,
        sup.downsample,
        sup.threshold,
        sup.alpha,
        sup_seed,
    );
    let sparse = generate_supervisory(
        &calib.traj,
        sup.sparse_downsample,
        sup.sparse_threshold,
        sup.alpha,
        sup_seed,
    );
    let r_true = sim.r_true.matrix();
    let outcomes = methods
        .iter()
        .map(|&m| run_method(m, cfg, &calib, &test, &sparse.spec, &dense.spec, &r_true))
        .collect();
    Trial {
        index,
        sparse_counts: sparse.counts(),
        dense_counts: dense.counts(),
        outcomes,
    }
}

fn summarize(methods: &[Method], trials: &[Trial]) -> Vec<MethodSummary> {
    methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let outcomes: Vec<&Outcome> = trials.iter().map(|t| &t.outcomes[i]).collect();
            let ok: Vec<(f64, f64)> = outcomes
                .iter()
                .filter_map(|o| o.rmse.as_ref().ok().map(|&r| (r, o.recovery)))
                .collect();
            let n = ok.len() as f64;
            let mean = ok.iter().map(|o| o.0).sum::<f64>() / n;
            let var = if ok.len() > 1 {
                ok.iter().map(|o| (o.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            MethodSummary {
                method,
                mean_rmse: mean,
                se_rmse: (var / n).sqrt(),
                mean_recovery: ok.iter().map(|o| o.1).sum::<f64>() / n,
                ok: ok.len(),
                failed: outcomes.len() - ok.len(),
            }
        })
        .collect()
}

/// Runs `cfg.simulation.trials` trials on `cfg.simulation.workers` threads.
/// Results do not depend on the worker count.
pub fn monte_carlo(cfg: &Config, methods: &[Method]) -> Study {
    let n = cfg.simulation.trials;
    let run = || {
        (0..n)
            .into_par_iter()
            .map(|i| run_trial(cfg, methods, i))
            .collect::<Vec<_>>()
    };
    let trials = match rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.simulation.workers)
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => (0..n).map(|i| run_trial(cfg, methods, i)).collect(),
    };
    let summary = summarize(methods, &trials);
    Study { trials, summary }
}
