//! Gradient descent over θ using either differentiation mode.

use alloc::vec::Vec;
use core::ops::Range;

use crate::filter::{filtered_means, run_filter};
use crate::grad_forward::forward_gradient_weighted;
use crate::grad_reverse::reverse_gradient_weighted;
use crate::{CovParam, Error, Gradient, Result, SupervisorySpec, SystemModel, Vector};

/// Weights `(wᵒ, wˢ)` of the objective `wᵒ ℓᵒ + wˢ ℓˢ`. The likelihood itself
/// is `(1, 1)`; `(1, 0)` is the primary-only baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub primary: f64,
    pub supervisory: f64,
}

impl LossWeights {
    pub const FULL: LossWeights = LossWeights {
        primary: 1.0,
        supervisory: 1.0,
    };
    pub const PRIMARY_ONLY: LossWeights = LossWeights {
        primary: 1.0,
        supervisory: 0.0,
    };

    pub fn objective(&self, ell_o: f64, ell_s: f64) -> f64 {
        self.primary * ell_o + self.supervisory * ell_s
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::FULL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    Forward,
    Reverse,
}

/// Armijo sufficient-decrease constant.
pub const ARMIJO_C: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationConfig {
    pub mode: GradientMode,
    pub itermax: usize,
    /// Initial (line search) or fixed step size.
    pub eta0: f64,
    /// Backtracking by halving until the Armijo condition holds.
    pub line_search: bool,
    pub grad_tol: f64,
    pub loss_weights: LossWeights,
    pub max_backtracks: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            mode: GradientMode::Reverse,
            itermax: 20,
            eta0: 0.1,
            line_search: true,
            grad_tol: 1e-8,
            loss_weights: LossWeights::FULL,
            max_backtracks: 40,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.itermax == 0 {
            return Err(Error::Invalid("itermax must be at least 1"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::Invalid("eta0 must be positive"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::Invalid("grad_tol must be non-negative"));
        }
        Ok(())
    }
}

/// State at the start of one iteration and the step taken from it.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// Weighted objective at the iterate.
    pub loss: f64,
    pub ell_o: f64,
    pub ell_s: f64,
    pub grad_norm: f64,
    /// Accepted step size, 0 when no step was taken.
    pub step: f64,
    /// Seconds; 0 without the `std` feature.
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    MaxIterations,
    GradientTolerance,
    /// No step size satisfied the Armijo condition.
    LineSearchStalled,
    /// A loss or gradient evaluation failed; `theta_hat` is the last valid
    /// iterate.
    NonFinite {
        iteration: usize,
        error: Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub theta_hat: Vector,
    pub history: Vec<IterationRecord>,
    /// Objective at `theta_hat`.
    pub final_loss: f64,
    pub termination: Termination,
}

impl CalibrationReport {
    pub fn loss_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }

    pub fn grad_norm_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.grad_norm).collect()
    }
}

/// Gradient of the weighted objective in the requested mode.
pub fn gradient(
    mode: GradientMode,
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
    weights: LossWeights,
) -> Result<Gradient> {
    match mode {
        GradientMode::Forward => forward_gradient_weighted(model, spec, ys, param, theta, weights),
        GradientMode::Reverse => reverse_gradient_weighted(model, spec, ys, param, theta, weights),
    }
}

struct Stopwatch {
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(feature = "std")]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(not(feature = "std"))]
        {
            0.0
        }
    }
}

/// Descends `wᵒ ℓᵒ + wˢ ℓˢ` from `theta0` for at most `cfg.itermax` steps.
///
/// With line search every accepted step satisfies the Armijo condition, so
/// the loss history is non-increasing. Numerical failures end the run with
/// [`Termination::NonFinite`] rather than an error.
pub fn calibrate(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta0: &Vector,
    cfg: &CalibrationConfig,
) -> Result<CalibrationReport> {
    cfg.validate()?;
    if theta0.len() != param.dim() {
        return Err(Error::ThetaDim {
            expected: param.dim(),
            got: theta0.len(),
        });
    }
    if theta0.iter().any(|t| !t.is_finite()) {
        return Err(Error::Invalid("theta0 is not finite"));
    }
    crate::filter::check_inputs(model, spec, ys, param, theta0)?;

    let w = cfg.loss_weights;
    let eval = |theta: &Vector| gradient(cfg.mode, model, spec, ys, param, theta, w);
    let objective = |theta: &Vector| -> Result<f64> {
        let run = run_filter(model, spec, ys, param, theta, false)?;
        Ok(w.objective(run.loss.ell_o, run.loss.ell_s))
    };

    let mut theta = theta0.clone();
    let mut history = Vec::new();
    let mut watch = Stopwatch::start();
    let mut current = match eval(&theta) {
        Ok(g) => g,
        Err(error) => {
            return Ok(CalibrationReport {
                theta_hat: theta,
                history,
                final_loss: f64::NAN,
                termination: Termination::NonFinite {
                    iteration: 0,
                    error,
                },
            })
        }
    };
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=cfg.itermax {
        let loss = w.objective(current.loss.ell_o, current.loss.ell_s);
        let grad_norm = current.grad.norm();
        let mut record = IterationRecord {
            loss,
            ell_o: current.loss.ell_o,
            ell_s: current.loss.ell_s,
            grad_norm,
            step: 0.0,
            wall_time: 0.0,
        };
        if grad_norm <= cfg.grad_tol {
            record.wall_time = watch.seconds();
            history.push(record);
            termination = Termination::GradientTolerance;
            break;
        }

        let accepted = if cfg.line_search {
            let mut eta = cfg.eta0;
            let mut found = None;
            for _ in 0..cfg.max_backtracks {
                let candidate = &theta - &current.grad * eta;
                if let Ok(value) = objective(&candidate) {
                    if value <= loss - ARMIJO_C * eta * grad_norm * grad_norm {
                        found = Some((candidate, eta));
                        break;
                    }
                }
                eta *= 0.5;
            }
            found
        } else {
            Some((&theta - &current.grad * cfg.eta0, cfg.eta0))
        };

        let Some((candidate, eta)) = accepted else {
            record.wall_time = watch.seconds();
            history.push(record);
            termination = Termination::LineSearchStalled;
            break;
        };
        match eval(&candidate) {
            Ok(next) => {
                record.step = eta;
                record.wall_time = watch.seconds();
                history.push(record);
                theta = candidate;
                current = next;
            }
            Err(error) => {
                record.wall_time = watch.seconds();
                history.push(record);
                termination = Termination::NonFinite { iteration, error };
                break;
            }
        }
        watch = Stopwatch::start();
    }

    Ok(CalibrationReport {
        final_loss: w.objective(current.loss.ell_o, current.loss.ell_s),
        theta_hat: theta,
        history,
        termination,
    })
}

/// Position RMSE of a plain Kalman filter run with `R(θ̂)`, `Q(θ̂)` on test
/// data, against the true states. `position` selects the state entries
/// compared.
pub fn evaluate(
    model: &SystemModel,
    ys: &[Vector],
    truth: &[Vector],
    param: &CovParam,
    theta_hat: &Vector,
    position: Range<usize>,
) -> Result<f64> {
    if truth.len() != model.horizon() {
        return Err(Error::Dimension {
            what: "truth states",
            expected: model.horizon(),
            got: truth.len(),
        });
    }
    let means = filtered_means(model, ys, param, theta_hat)?;
    let len = position.len();
    let sq: f64 = means
        .iter()
        .zip(truth)
        .map(|(est, x)| {
            (est.rows(position.start, len) - x.rows(position.start, len)).norm_squared()
        })
        .sum();
    Ok(libm::sqrt(sq / means.len().max(1) as f64))
}
