//! Augmented-state Kalman filter evaluating the negative log-likelihood
//! `ℒ(θ) = ℓᵒ(θ) + ℓˢ(θ)`.
//!
//! The belief covers the current state followed by copies of every
//! supervised state appended so far. Appending happens after the measurement
//! update of the supervised step. All additive `log 2π` constants are kept,
//! so the loss is the exact negative log-density of the measurements.

use alloc::vec::Vec;

use crate::linalg::{
    duplicate_head, duplicate_head_cov, gaussian_nll, right_solve, symmetrize, Chol,
};
use crate::{CovParam, Error, Mat, Result, SupervisorySpec, SystemModel, Vector};

/// Mean and covariance over the current state and appended supervised
/// states; `ledger` lists the appended time steps in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub x: Vector,
    pub p: Mat,
    pub ledger: Vec<usize>,
}

impl Belief {
    pub fn new(x: Vector, p: Mat) -> Self {
        Belief {
            x,
            p,
            ledger: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Mean and covariance of the appended block `Xˢ`.
    pub fn supervised(&self, d: usize) -> (Vector, Mat) {
        let n = self.dim() - d;
        (
            self.x.rows(d, n).into_owned(),
            self.p.view((d, d), (n, n)).into_owned(),
        )
    }

    fn check(&self, d: usize) -> Result<()> {
        let expected = d * (1 + self.ledger.len());
        if self.x.len() != expected || self.p.nrows() != expected || self.p.ncols() != expected {
            return Err(Error::Dimension {
                what: "augmented belief",
                expected,
                got: self.x.len(),
            });
        }
        Ok(())
    }
}

/// Quantities of one measurement update.
#[derive(Clone, Debug)]
pub struct Innovation {
    /// `r_k = y_k − H_k x̄_k`.
    pub residual: Vector,
    /// `S_k = H_k P̄ᵒ_k H_kᵀ + R_k`.
    pub cov: Mat,
    pub chol: Chol,
    /// `K_k = P̄_k H_{k,0}ᵀ S_k⁻¹`.
    pub gain: Mat,
    /// `P̄_k H_{k,0}ᵀ`.
    pub cross: Mat,
}

/// `X̄ = F₀ X̂ + B₀ u`, `P̄ = F₀ P̂ F₀ᵀ + Q₀` with `F₀ = blockdiag(F, I)`,
/// `B₀ = [B; 0]`, `Q₀ = blockdiag(Q, 0)`.
pub fn predict(belief: &Belief, f: &Mat, b: &Mat, u: &Vector, q: &Mat) -> Result<Belief> {
    let d = f.nrows();
    belief.check(d)?;
    if b.nrows() != d || b.ncols() != u.len() || q.nrows() != d {
        return Err(Error::Dimension {
            what: "predict inputs",
            expected: d,
            got: b.nrows(),
        });
    }
    let mut x = belief.x.clone();
    let head = f * belief.x.rows(0, d) + b * u;
    x.rows_mut(0, d).copy_from(&head);

    let mut p = belief.p.clone();
    let rows = f * belief.p.rows(0, d);
    p.rows_mut(0, d).copy_from(&rows);
    let cols = p.columns(0, d) * f.transpose();
    p.columns_mut(0, d).copy_from(&cols);
    {
        let mut corner = p.view_mut((0, 0), (d, d));
        corner += q;
    }
    symmetrize(&mut p);
    Ok(Belief {
        x,
        p,
        ledger: belief.ledger.clone(),
    })
}

/// Measurement update with the primary measurement `y` of step `step`.
pub fn update(
    prior: &Belief,
    h: &Mat,
    r: &Mat,
    y: &Vector,
    step: usize,
) -> Result<(Belief, Innovation)> {
    let d = h.ncols();
    let m = h.nrows();
    if y.len() != m || r.nrows() != m || r.ncols() != m {
        return Err(Error::Dimension {
            what: "measurement",
            expected: m,
            got: y.len(),
        });
    }
    let residual = y - h * prior.x.rows(0, d);
    let cross = prior.p.columns(0, d) * h.transpose();
    let mut cov = h * cross.rows(0, d) + r;
    symmetrize(&mut cov);
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(Error::SingularInnovation { step })?;
    let gain = right_solve(&chol, &cross);

    let x = &prior.x + &gain * &residual;
    let mut p = &prior.p - &gain * cross.transpose();
    symmetrize(&mut p);
    let post = Belief {
        x,
        p,
        ledger: prior.ledger.clone(),
    };
    Ok((
        post,
        Innovation {
            residual,
            cov,
            chol,
            gain,
            cross,
        },
    ))
}

/// Appends a copy of the current state when `k` is a supervised step.
/// Returns whether an append took place.
pub fn maybe_append(
    belief: Belief,
    k: usize,
    spec: &SupervisorySpec,
    d: usize,
) -> Result<(Belief, bool)> {
    if !spec.contains(k) {
        return Ok((belief, false));
    }
    if belief.ledger.contains(&k) {
        return Err(Error::DuplicateAppend { step: k });
    }
    let x = duplicate_head(&belief.x, d);
    let p = duplicate_head_cov(&belief.p, d);
    let mut ledger = belief.ledger;
    ledger.push(k);
    Ok((Belief { x, p, ledger }, true))
}

/// `lᵒ_k = ½ log|S_k| + ½ r_kᵀ S_k⁻¹ r_k + (m/2) log 2π`.
pub fn primary_loss_step(residual: &Vector, chol: &Chol) -> f64 {
    gaussian_nll(residual, chol)
}

/// Terms of the supervisory loss at the end of the horizon.
#[derive(Clone, Debug)]
pub struct SupervisoryTerms {
    pub ell_s: f64,
    /// `v = yˢ − Hˢ X̂ˢ_N`.
    pub v: Vector,
    /// `C = Hˢ P̂ˢ_N Hˢᵀ + Ψ`.
    pub c: Mat,
    pub chol: Option<Chol>,
}

/// `ℓˢ = ½ log|C| + ½ vᵀ C⁻¹ v + (s/2) log 2π`.
pub fn supervisory_loss(xs: &Vector, ps: &Mat, spec: &SupervisorySpec) -> Result<SupervisoryTerms> {
    if spec.is_empty() {
        return Ok(SupervisoryTerms {
            ell_s: 0.0,
            v: Vector::zeros(0),
            c: Mat::zeros(0, 0),
            chol: None,
        });
    }
    if xs.len() != spec.hs.ncols() {
        return Err(Error::Dimension {
            what: "supervised states",
            expected: spec.hs.ncols(),
            got: xs.len(),
        });
    }
    let v = &spec.ys - &spec.hs * xs;
    let mut c = &spec.hs * ps * spec.hs.transpose() + spec.effective_psi();
    symmetrize(&mut c);
    let chol = c.clone().cholesky().ok_or(Error::SingularSupervisory)?;
    let ell_s = gaussian_nll(&v, &chol);
    Ok(SupervisoryTerms {
        ell_s,
        v,
        c,
        chol: Some(chol),
    })
}

/// The factorized loss of one filter run.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub ell_o: f64,
    pub ell_s: f64,
    pub total: f64,
    /// `lᵒ_k` for `k = 1..N`.
    pub per_step: Vec<f64>,
    /// `‖r_k‖` for `k = 1..N`.
    pub residual_norms: Vec<f64>,
    pub v: Vector,
    pub c: Mat,
}

/// What the reverse pass needs from step `k`.
#[derive(Clone, Debug)]
pub struct TraceStep {
    /// `F_k` (the augmented `F_{k,0}` is `blockdiag(F_k, I)`).
    pub f: Mat,
    /// `H_k` (the augmented `H_{k,0}` is `[H_k 0]`).
    pub h: Mat,
    pub gain: Mat,
    pub chol: Chol,
    pub residual: Vector,
    pub appended: bool,
}

impl TraceStep {
    pub fn retained_elements(&self) -> usize {
        let m = self.residual.len();
        self.f.len() + self.h.len() + self.gain.len() + m * m + m + 1
    }
}

#[derive(Clone, Debug, Default)]
pub struct FilterTrace {
    pub steps: Vec<TraceStep>,
}

impl FilterTrace {
    /// Number of stored scalars, the reverse mode's memory footprint.
    pub fn retained_elements(&self) -> usize {
        self.steps.iter().map(TraceStep::retained_elements).sum()
    }
}

#[derive(Clone, Debug)]
pub struct FilterRun {
    pub loss: LossBreakdown,
    pub trace: Option<FilterTrace>,
    /// Terminal belief `(X̂_N, P̂_N)`.
    pub belief: Belief,
    pub supervisory: SupervisoryTerms,
}

/// Output of one predict/update/append cycle.
pub(crate) struct StepOutput {
    pub innovation: Innovation,
    pub posterior: Belief,
    pub appended: bool,
    pub loss: f64,
}

/// Checks shared by every full pass.
pub(crate) fn check_inputs(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
) -> Result<()> {
    model.validate()?;
    spec.validate(model.state_dim(), model.horizon())?;
    if ys.len() != model.horizon() {
        return Err(Error::Dimension {
            what: "measurement sequence",
            expected: model.horizon(),
            got: ys.len(),
        });
    }
    if param.meas_dim() != model.meas_dim() || param.proc_dim() != model.state_dim() {
        return Err(Error::Dimension {
            what: "parameterization",
            expected: model.meas_dim(),
            got: param.meas_dim(),
        });
    }
    if theta.len() != param.dim() {
        return Err(Error::ThetaDim {
            expected: param.dim(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// One filter cycle for the one-based step `k`.
pub(crate) fn filter_step(
    belief: &Belief,
    model: &SystemModel,
    k: usize,
    y: &Vector,
    r: &Mat,
    q: &Mat,
    spec: &SupervisorySpec,
) -> Result<StepOutput> {
    let i = k - 1;
    let d = model.state_dim();
    let prior = predict(belief, &model.f[i], &model.b[i], &model.u[i], q)?;
    let (post, innovation) = update(&prior, &model.h[i], r, y, k)?;
    let loss = primary_loss_step(&innovation.residual, &innovation.chol);
    let (posterior, appended) = maybe_append(post, k, spec, d)?;
    Ok(StepOutput {
        innovation,
        posterior,
        appended,
        loss,
    })
}

pub(crate) fn finish(
    belief: &Belief,
    spec: &SupervisorySpec,
    d: usize,
    per_step: Vec<f64>,
    residual_norms: Vec<f64>,
) -> Result<(LossBreakdown, SupervisoryTerms)> {
    if belief.ledger != spec.indices {
        return Err(Error::Invalid("not every supervised state was appended"));
    }
    let (xs, ps) = belief.supervised(d);
    let terms = supervisory_loss(&xs, &ps, spec)?;
    let ell_o: f64 = per_step.iter().sum();
    if !ell_o.is_finite() || !terms.ell_s.is_finite() {
        return Err(Error::NonFinite { what: "loss" });
    }
    let loss = LossBreakdown {
        ell_o,
        ell_s: terms.ell_s,
        total: ell_o + terms.ell_s,
        per_step,
        residual_norms,
        v: terms.v.clone(),
        c: terms.c.clone(),
    };
    Ok((loss, terms))
}

/// Runs the filter over `k = 1..N` and evaluates `ℒ(θ)`; keeps the reverse
/// pass trace when `keep_trace` is set.
pub fn run_filter(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
    keep_trace: bool,
) -> Result<FilterRun> {
    check_inputs(model, spec, ys, param, theta)?;
    let n = model.horizon();
    let d = model.state_dim();
    let r = param.eval_r(theta)?;
    let mut belief = Belief::new(model.x0.clone(), model.p0.clone());
    let mut per_step = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    let mut trace = keep_trace.then(|| FilterTrace {
        steps: Vec::with_capacity(n),
    });

    for k in 1..=n {
        let q = param.eval_q(theta, k)?;
        let out = filter_step(&belief, model, k, &ys[k - 1], &r, &q, spec)?;
        per_step.push(out.loss);
        norms.push(out.innovation.residual.norm());
        if let Some(trace) = trace.as_mut() {
            let Innovation {
                residual,
                chol,
                gain,
                ..
            } = out.innovation;
            trace.steps.push(TraceStep {
                f: model.f[k - 1].clone(),
                h: model.h[k - 1].clone(),
                gain,
                chol,
                residual,
                appended: out.appended,
            });
        }
        belief = out.posterior;
    }
    let (loss, supervisory) = finish(&belief, spec, d, per_step, norms)?;
    Ok(FilterRun {
        loss,
        trace,
        belief,
        supervisory,
    })
}

/// Posterior means `x̂_k`, `k = 1..N`, of a plain (unaugmented) Kalman filter.
pub fn filtered_means(
    model: &SystemModel,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
) -> Result<Vec<Vector>> {
    let spec = SupervisorySpec::empty();
    check_inputs(model, &spec, ys, param, theta)?;
    let r = param.eval_r(theta)?;
    let mut belief = Belief::new(model.x0.clone(), model.p0.clone());
    let mut means = Vec::with_capacity(model.horizon());
    for k in 1..=model.horizon() {
        let q = param.eval_q(theta, k)?;
        let out = filter_step(&belief, model, k, &ys[k - 1], &r, &q, &spec)?;
        means.push(out.posterior.x.clone());
        belief = out.posterior;
    }
    Ok(means)
}
