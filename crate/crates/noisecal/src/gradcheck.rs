//! Consistency report: forward against reverse gradients, both against
//! finite differences, and the filter loss against the dense joint
//! likelihood on a window small enough for the oracle.

use std::fmt;

use noisecal_core::filter::run_filter;
use noisecal_core::grad_reverse::{reverse_gradient_with, PriorAdjointForm};
use noisecal_core::oracle::{fd_gradient, joint_nll, max_relative_error, FD_STEP, ORACLE_MAX_DIM};
use noisecal_core::{
    forward_gradient, CovParam, LossWeights, Result, SupervisorySpec, SystemModel, Vector,
};

pub const GRAD_TOL: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-4;
pub const NLL_TOL: f64 = 1e-8;
/// Floor of the relative error against finite differences.
pub const FD_FLOOR: f64 = 1e-6;
pub const GRAD_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    /// `None` when skipped.
    pub value: Option<f64>,
    pub threshold: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value.is_none_or(|v| v <= self.threshold)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            None => write!(f, "{:<28} skipped", self.name),
            Some(v) => {
                let verdict = if self.passed() { "ok" } else { "FAIL" };
                write!(
                    f,
                    "{:<28} {v:.3e} (limit {:.0e}) {verdict}",
                    self.name, self.threshold
                )
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub checks: Vec<Check>,
    /// Steps used for the likelihood comparison.
    pub window: usize,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    /// Upper bound on the likelihood window; shrunk further to fit the
    /// oracle.
    pub window: usize,
    pub form: PriorAdjointForm,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            window: 40,
            form: PriorAdjointForm::Printed,
        }
    }
}

/// The first `n` steps of a model.
pub fn truncate(model: &SystemModel, n: usize) -> SystemModel {
    SystemModel {
        f: model.f[..n].to_vec(),
        b: model.b[..n].to_vec(),
        h: model.h[..n].to_vec(),
        u: model.u[..n].to_vec(),
        x0: model.x0.clone(),
        p0: model.p0.clone(),
    }
}

/// Supervision restricted to steps `≤ n`: rows touching later states are
/// dropped and `Ψ` is marginalized accordingly.
pub fn restrict(spec: &SupervisorySpec, d: usize, n: usize) -> SupervisorySpec {
    let keep = spec.indices.iter().take_while(|&&k| k <= n).count();
    let rows: Vec<usize> = (0..spec.obs_dim())
        .filter(|&r| (keep * d..spec.hs.ncols()).all(|c| spec.hs[(r, c)] == 0.0))
        .collect();
    if keep == 0 || rows.is_empty() {
        return SupervisorySpec::empty();
    }
    SupervisorySpec {
        indices: spec.indices[..keep].to_vec(),
        hs: spec.hs.select_rows(&rows).columns(0, keep * d).into_owned(),
        psi: spec.psi.select_rows(&rows).select_columns(&rows),
        ys: spec.ys.select_rows(&rows),
    }
}

fn oracle_fits(n: usize, d: usize, m: usize, spec: &SupervisorySpec) -> bool {
    (n * d).max(n * m + spec.obs_dim()) <= ORACLE_MAX_DIM
}

fn gradient_checks(
    label: &str,
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
    form: PriorAdjointForm,
) -> Result<[Check; 2]> {
    let fwd = forward_gradient(model, spec, ys, param, theta)?;
    let rev = reverse_gradient_with(model, spec, ys, param, theta, LossWeights::FULL, form)?;
    let fd = fd_gradient(
        |t| run_filter(model, spec, ys, param, t, false).map(|r| r.loss.total),
        theta,
        FD_STEP,
    );
    let fd_err = match fd {
        Ok(num) => max_relative_error(&fwd.grad, &num, FD_FLOOR)
            .max(max_relative_error(&rev.grad, &num, FD_FLOOR)),
        Err(_) => f64::INFINITY,
    };
    Ok([
        Check {
            name: format!("forward-reverse{label}"),
            value: Some(max_relative_error(&fwd.grad, &rev.grad, GRAD_FLOOR)),
            threshold: GRAD_TOL,
        },
        Check {
            name: format!("analytic-fd{label}"),
            value: Some(fd_err),
            threshold: FD_TOL,
        },
    ])
}

fn skipped(label: &str) -> [Check; 3] {
    [
        Check {
            name: format!("forward-reverse{label}"),
            value: None,
            threshold: GRAD_TOL,
        },
        Check {
            name: format!("analytic-fd{label}"),
            value: None,
            threshold: FD_TOL,
        },
        Check {
            name: format!("filter-joint-nll{label}"),
            value: None,
            threshold: NLL_TOL,
        },
    ]
}

/// Runs every check at `theta`. Checks involving supervision are reported
/// as skipped when `spec` is empty.
pub fn gradcheck(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
    opts: Options,
) -> Result<Report> {
    let d = model.state_dim();
    let m = model.meas_dim();
    let empty = SupervisorySpec::empty();
    let mut window = opts.window.min(model.horizon()).max(1);
    while window > 1 && !oracle_fits(window, d, m, &restrict(spec, d, window)) {
        window -= 1;
    }
    let short = truncate(model, window);
    let short_spec = restrict(spec, d, window);
    let nll_check = |spec: &SupervisorySpec, label: &str| -> Result<Check> {
        let filter = run_filter(&short, spec, &ys[..window], param, theta, false)?
            .loss
            .total;
        let oracle = joint_nll(&short, spec, &ys[..window], param, theta)?;
        Ok(Check {
            name: format!("filter-joint-nll{label}"),
            value: Some((filter - oracle).abs()),
            threshold: NLL_TOL,
        })
    };

    let mut checks = Vec::new();
    checks.extend(gradient_checks(
        "", model, &empty, ys, param, theta, opts.form,
    )?);
    checks.push(nll_check(&empty, "")?);
    if spec.is_empty() {
        checks.extend(skipped(" supervised"));
    } else {
        checks.extend(gradient_checks(
            " supervised",
            model,
            spec,
            ys,
            param,
            theta,
            opts.form,
        )?);
        if short_spec.is_empty() {
            checks.push(Check {
                name: "filter-joint-nll supervised".into(),
                value: None,
                threshold: NLL_TOL,
            });
        } else {
            checks.push(nll_check(&short_spec, " supervised")?);
        }
    }
    Ok(Report { checks, window })
}
