//! Reverse-mode differentiation of `ℒ(θ)`.
//!
//! A traced forward pass stores `{F_k, H_k, K_k, S_k, r_k, J_k}`; the adjoints
//! `(∂ℒ/∂X, ∂ℒ/∂P)` are then swept from `k = N` down to `k = 1`, yielding
//! `∂ℒ/∂R_k` and `∂ℒ/∂Q_k` at every step. The chain into θ is a Frobenius
//! inner product with the parameterization's partials. Cost is independent
//! of `p`; memory is linear in `N`.
//!
//! Covariance adjoints are general matrices during the sweep. Only their
//! symmetric parts are meaningful, since every perturbation they are
//! contracted with is symmetric.

use alloc::vec::Vec;

use crate::filter::{run_filter, SupervisoryTerms, TraceStep};
use crate::linalg::{fold_head, fold_head_cov, frobenius, symmetrize};
use crate::optimizer::LossWeights;
use crate::{CovParam, Error, Gradient, Mat, Result, SupervisorySpec, SystemModel, Vector};

/// `(∂ℒ/∂X, ∂ℒ/∂P)` of the current augmented belief.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjoint {
    pub x: Vector,
    pub p: Mat,
}

/// Which inverse appears in the residual cross terms of `∂ℒ/∂P̄_k`:
///
/// `(I − K H₀)ᵀ [∂ℒ/∂P̌ + ½ ∂ℒ/∂X̌ rᵀ W H₀ + ½ H₀ᵀ W r (∂ℒ/∂X̌)ᵀ] (I − K H₀)`.
///
/// `Printed` uses `W = R_k⁻¹`, which is exact because
/// `R⁻¹ H (I − K H) = S⁻¹ H`. `InnovationInverse` uses `W = S_k⁻¹`; it does
/// not match finite differences and is kept as a negative control.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PriorAdjointForm {
    #[default]
    Printed,
    InnovationInverse,
}

/// Terminal adjoints from the supervisory loss, lifted to the full belief of
/// dimension `dim` via `G = [0 I]`.
pub fn init_adjoints(
    terms: &SupervisoryTerms,
    spec: &SupervisorySpec,
    d: usize,
    dim: usize,
) -> Adjoint {
    init_adjoints_weighted(terms, spec, d, dim, 1.0)
}

fn init_adjoints_weighted(
    terms: &SupervisoryTerms,
    spec: &SupervisorySpec,
    d: usize,
    dim: usize,
    w: f64,
) -> Adjoint {
    let mut adj = Adjoint {
        x: Vector::zeros(dim),
        p: Mat::zeros(dim, dim),
    };
    let Some(chol) = terms.chol.as_ref() else {
        return adj;
    };
    let ns = dim - d;
    let cinv_v = chol.solve(&terms.v);
    let cinv_hs = chol.solve(&spec.hs);
    let hs_cinv_v = spec.hs.transpose() * &cinv_v;
    // ∂ℓˢ/∂X̂ˢ = −Hˢᵀ C⁻¹ v
    adj.x.rows_mut(d, ns).copy_from(&(-&hs_cinv_v * w));
    // ∂ℓˢ/∂P̂ˢ = ½ (Hˢᵀ C⁻¹ Hˢ − Hˢᵀ C⁻¹ v vᵀ C⁻¹ Hˢ)
    let ps = (spec.hs.transpose() * cinv_hs - &hs_cinv_v * hs_cinv_v.transpose()) * (0.5 * w);
    adj.p.view_mut((d, d), (ns, ns)).copy_from(&ps);
    adj
}

/// Adjoints after stepping back over step `k`, with that step's
/// `∂ℒ/∂R_k` and `∂ℒ/∂Q_k`.
#[derive(Clone, Debug)]
pub struct BackwardStep {
    pub adjoint: Adjoint,
    pub dl_dr: Mat,
    pub dl_dq: Mat,
}

/// Reverses append, update and prediction of one step. `r_cov` is `R_k`;
/// `w_primary` weights the step's own loss term `lᵒ_k`.
pub fn backward_step(
    adj: Adjoint,
    step: &TraceStep,
    r_cov: &Mat,
    form: PriorAdjointForm,
    w_primary: f64,
) -> Result<BackwardStep> {
    let d = step.f.nrows();
    let dim = step.gain.nrows();
    let expected = dim + if step.appended { d } else { 0 };
    if adj.x.len() != expected || adj.p.nrows() != expected {
        return Err(Error::Dimension {
            what: "adjoint",
            expected,
            got: adj.x.len(),
        });
    }

    // append: ∂ℒ/∂X̌ = J_kᵀ ∂ℒ/∂X̂, ∂ℒ/∂P̌ = J_kᵀ ∂ℒ/∂P̂ J_k
    let (ax, ap) = if step.appended {
        (fold_head(&adj.x, d), fold_head_cov(&adj.p, d))
    } else {
        (adj.x, adj.p)
    };

    let h = &step.h;
    let k = &step.gain;
    let chol = &step.chol;
    let s_inv = chol.inverse();
    let white = chol.solve(&step.residual);
    let kt_ax = k.transpose() * &ax;

    // ∂ℒ/∂R_k
    let mut dl_dr = k.transpose() * &ap * k;
    dl_dr -= (&kt_ax * white.transpose() + &white * kt_ax.transpose()) * 0.5;
    dl_dr += (&s_inv - &white * white.transpose()) * (0.5 * w_primary);

    // ∂ℒ/∂X̄_k = (I − K H₀)ᵀ ∂ℒ/∂X̌ − H₀ᵀ S⁻¹ r
    let mut bx = ax.clone();
    {
        let mut head = bx.rows_mut(0, d);
        head -= h.transpose() * (&kt_ax + &white * w_primary);
    }

    // ∂ℒ/∂P̄_k
    let z = match form {
        PriorAdjointForm::Printed => {
            let r_chol = r_cov
                .clone()
                .cholesky()
                .ok_or(Error::Invalid("R_k is not positive definite"))?;
            h.transpose() * r_chol.solve(&step.residual)
        }
        PriorAdjointForm::InnovationInverse => h.transpose() * &white,
    };
    let mut mid = ap;
    {
        let mut cols = mid.columns_mut(0, d);
        cols += &ax * z.transpose() * 0.5;
    }
    {
        let mut rows = mid.rows_mut(0, d);
        rows += &z * ax.transpose() * 0.5;
    }
    // mid (I − K H₀)
    let mk = &mid * k;
    {
        let mut cols = mid.columns_mut(0, d);
        cols -= &mk * h;
    }
    // (I − K H₀)ᵀ mid
    let kt_mid = k.transpose() * &mid;
    {
        let mut rows = mid.rows_mut(0, d);
        rows -= h.transpose() * kt_mid;
    }
    {
        let mut corner = mid.view_mut((0, 0), (d, d));
        corner += h.transpose() * (&s_inv - &white * white.transpose()) * h * (0.5 * w_primary);
    }
    let mut bp = mid;

    // ∂ℒ/∂Q_k is the process-noise block of ∂ℒ/∂P̄_k
    let dl_dq = bp.view((0, 0), (d, d)).into_owned();

    // ∂ℒ/∂X̂_{k−1} = F₀ᵀ ∂ℒ/∂X̄_k, ∂ℒ/∂P̂_{k−1} = F₀ᵀ ∂ℒ/∂P̄_k F₀
    let f = &step.f;
    let head = f.transpose() * bx.rows(0, d);
    bx.rows_mut(0, d).copy_from(&head);
    let rows = f.transpose() * bp.rows(0, d);
    bp.rows_mut(0, d).copy_from(&rows);
    let cols = bp.columns(0, d) * f;
    bp.columns_mut(0, d).copy_from(&cols);

    Ok(BackwardStep {
        adjoint: Adjoint { x: bx, p: bp },
        dl_dr,
        dl_dq,
    })
}

/// `∂ℒ/∂θ_j = Σ_k ⟨∂ℒ/∂R_k, ∂R_k/∂θ_j⟩ + ⟨∂ℒ/∂Q_k, ∂Q_k/∂θ_j⟩`.
///
/// The adjoints are symmetrized before contraction. The parameterizations
/// are time invariant, so the per-step adjoints are summed first.
pub fn chain_to_theta(
    dl_dr: &[Mat],
    dl_dq: &[Mat],
    param: &CovParam,
    theta: &Vector,
) -> Result<Vector> {
    let m = param.meas_dim();
    let d = param.proc_dim();
    let mut sum_r = dl_dr.iter().fold(Mat::zeros(m, m), |acc, a| acc + a);
    let mut sum_q = dl_dq.iter().fold(Mat::zeros(d, d), |acc, a| acc + a);
    symmetrize(&mut sum_r);
    symmetrize(&mut sum_q);
    let mut grad = Vector::zeros(param.dim());
    for (j, (dr, dq)) in param.partials(theta)?.into_iter().enumerate() {
        if let Some(dr) = dr {
            grad[j] += frobenius(&sum_r, &dr);
        }
        if let Some(dq) = dq {
            grad[j] += frobenius(&sum_q, &dq);
        }
    }
    Ok(grad)
}

/// `∇θ ℒ` by the adjoint sweep, with unit loss weights.
pub fn reverse_gradient(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
) -> Result<Gradient> {
    reverse_gradient_with(
        model,
        spec,
        ys,
        param,
        theta,
        LossWeights::default(),
        PriorAdjointForm::default(),
    )
}

/// `∇θ (wᵒ ℓᵒ + wˢ ℓˢ)` by the adjoint sweep.
pub fn reverse_gradient_weighted(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
    weights: LossWeights,
) -> Result<Gradient> {
    reverse_gradient_with(
        model,
        spec,
        ys,
        param,
        theta,
        weights,
        PriorAdjointForm::default(),
    )
}

pub fn reverse_gradient_with(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
    weights: LossWeights,
    form: PriorAdjointForm,
) -> Result<Gradient> {
    let run = run_filter(model, spec, ys, param, theta, true)?;
    let trace = run.trace.ok_or(Error::MissingTrace {
        step: model.horizon(),
    })?;
    let d = model.state_dim();
    let n = model.horizon();
    let r_cov = param.eval_r(theta)?;

    let mut adj = init_adjoints_weighted(
        &run.supervisory,
        spec,
        d,
        run.belief.dim(),
        weights.supervisory,
    );
    let mut dl_dr = Vec::with_capacity(n);
    let mut dl_dq = Vec::with_capacity(n);
    for k in (1..=n).rev() {
        let step = trace
            .steps
            .get(k - 1)
            .ok_or(Error::MissingTrace { step: k })?;
        let out = backward_step(adj, step, &r_cov, form, weights.primary)?;
        adj = out.adjoint;
        dl_dr.push(out.dl_dr);
        dl_dq.push(out.dl_dq);
    }
    dl_dr.reverse();
    dl_dq.reverse();
    let grad = chain_to_theta(&dl_dr, &dl_dq, param, theta)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient" });
    }
    Ok(Gradient {
        loss: run.loss,
        grad,
    })
}
