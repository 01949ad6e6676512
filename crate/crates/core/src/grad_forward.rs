//! Forward-mode differentiation of `ℒ(θ)`.
//!
//! Each coordinate `θ_j` carries the sensitivities `(∂_j X, ∂_j P)` of the
//! current belief through the filter recursion. Only the current step is
//! held, so memory is `O(p D²)` while time is `O(p N D³)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::filter::{check_inputs, filter_step, finish, Belief, Innovation, SupervisoryTerms};
use crate::linalg::{duplicate_head, duplicate_head_cov, right_solve, symmetrize, Chol};
use crate::optimizer::LossWeights;
use crate::{CovParam, Gradient, Mat, Result, SupervisorySpec, SystemModel, Vector};

/// `(∂_j X, ∂_j P)` for one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivity {
    pub dx: Vector,
    pub dp: Mat,
}

impl Sensitivity {
    pub fn zeros(dim: usize) -> Self {
        Sensitivity {
            dx: Vector::zeros(dim),
            dp: Mat::zeros(dim, dim),
        }
    }
}

/// `∂_j X̄ = F₀ ∂_j X̂`, `∂_j P̄ = F₀ ∂_j P̂ F₀ᵀ + ∂_j Q₀`.
pub fn sens_predict(s: &mut Sensitivity, f: &Mat, dq: Option<&Mat>) {
    let d = f.nrows();
    let head = f * s.dx.rows(0, d);
    s.dx.rows_mut(0, d).copy_from(&head);
    let rows = f * s.dp.rows(0, d);
    s.dp.rows_mut(0, d).copy_from(&rows);
    let cols = s.dp.columns(0, d) * f.transpose();
    s.dp.columns_mut(0, d).copy_from(&cols);
    if let Some(dq) = dq {
        let mut corner = s.dp.view_mut((0, 0), (d, d));
        corner += dq;
    }
    symmetrize(&mut s.dp);
}

/// Differentiates the measurement update, returning `(∂_j r_k, ∂_j S_k)`.
/// `P̄_k` enters through `inn.cross = P̄_k H₀ᵀ`.
pub fn sens_update(
    s: &mut Sensitivity,
    h: &Mat,
    inn: &Innovation,
    dr_cov: Option<&Mat>,
) -> (Vector, Mat) {
    let d = h.ncols();
    let dr = -(h * s.dx.rows(0, d));
    let dcross = s.dp.columns(0, d) * h.transpose();
    let mut ds = h * dcross.rows(0, d);
    if let Some(dr_cov) = dr_cov {
        ds += dr_cov;
    }
    symmetrize(&mut ds);
    // ∂K = ∂P̄ H₀ᵀ S⁻¹ − K ∂S S⁻¹
    let dk = right_solve(&inn.chol, &(&dcross - &inn.gain * &ds));
    // ∂X̌ = ∂X̄ + ∂K r + K ∂r
    s.dx += &dk * &inn.residual + &inn.gain * &dr;
    // ∂P̌ = (I − K H₀) ∂P̄ − ∂K H₀ P̄
    s.dp -= &inn.gain * dcross.transpose();
    s.dp -= &dk * inn.cross.transpose();
    symmetrize(&mut s.dp);
    (dr, ds)
}

/// `∂_j X̂ = J_k ∂_j X̌`, `∂_j P̂ = J_k ∂_j P̌ J_kᵀ`.
pub fn sens_append(s: &mut Sensitivity, appended: bool, d: usize) {
    if appended {
        s.dx = duplicate_head(&s.dx, d);
        s.dp = duplicate_head_cov(&s.dp, d);
    }
}

/// `∂lᵒ_k/∂θ_j = ½ tr(S⁻¹ ∂S) + ∂rᵀ S⁻¹ r − ½ rᵀ S⁻¹ ∂S S⁻¹ r`.
pub fn primary_grad_step(residual: &Vector, chol: &Chol, dr: &Vector, ds: &Mat) -> f64 {
    gaussian_term_grad(residual, chol, dr, ds)
}

fn gaussian_term_grad(residual: &Vector, chol: &Chol, dresidual: &Vector, dcov: &Mat) -> f64 {
    let white = chol.solve(residual);
    let trace = chol.solve(dcov).trace();
    0.5 * trace + dresidual.dot(&white) - 0.5 * white.dot(&(dcov * &white))
}

/// `∂ℓˢ/∂θ_j` from the terminal sensitivities of the supervised block, with
/// `∂v = −Hˢ ∂X̂ˢ` and `∂C = Hˢ ∂P̂ˢ Hˢᵀ`.
pub fn supervisory_grad(terms: &SupervisoryTerms, dxs: &Vector, dps: &Mat, hs: &Mat) -> f64 {
    let Some(chol) = terms.chol.as_ref() else {
        return 0.0;
    };
    let dv = -(hs * dxs);
    let dc = hs * dps * hs.transpose();
    gaussian_term_grad(&terms.v, chol, &dv, &dc)
}

/// `∇θ ℒ` by forward sensitivities, with unit loss weights.
pub fn forward_gradient(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
) -> Result<Gradient> {
    forward_gradient_weighted(model, spec, ys, param, theta, LossWeights::default())
}

/// `∇θ (wᵒ ℓᵒ + wˢ ℓˢ)` by forward sensitivities.
pub fn forward_gradient_weighted(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
    weights: LossWeights,
) -> Result<Gradient> {
    check_inputs(model, spec, ys, param, theta)?;
    let n = model.horizon();
    let d = model.state_dim();
    let p = param.dim();
    let r = param.eval_r(theta)?;
    let partials = param.partials(theta)?;
    let active: Vec<usize> = (0..p)
        .filter(|&j| partials[j].0.is_some() || partials[j].1.is_some())
        .collect();

    let mut sens = vec![Sensitivity::zeros(d); p];
    let mut grad_o = vec![0.0; p];
    let mut belief = Belief::new(model.x0.clone(), model.p0.clone());
    let mut per_step = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);

    for k in 1..=n {
        let q = param.eval_q(theta, k)?;
        let out = filter_step(&belief, model, k, &ys[k - 1], &r, &q, spec)?;
        let h = &model.h[k - 1];
        for &j in &active {
            let (dr_cov, dq) = &partials[j];
            let s = &mut sens[j];
            sens_predict(s, &model.f[k - 1], dq.as_ref());
            let (dr, ds) = sens_update(s, h, &out.innovation, dr_cov.as_ref());
            grad_o[j] +=
                primary_grad_step(&out.innovation.residual, &out.innovation.chol, &dr, &ds);
            sens_append(s, out.appended, d);
        }
        per_step.push(out.loss);
        norms.push(out.innovation.residual.norm());
        belief = out.posterior;
    }

    let (loss, terms) = finish(&belief, spec, d, per_step, norms)?;
    let mut grad = Vector::zeros(p);
    for &j in &active {
        let s = &sens[j];
        let ns = s.dx.len() - d;
        let dxs = s.dx.rows(d, ns).into_owned();
        let dps = s.dp.view((d, d), (ns, ns)).into_owned();
        let g_s = supervisory_grad(&terms, &dxs, &dps, &spec.hs);
        grad[j] = weights.primary * grad_o[j] + weights.supervisory * g_s;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(crate::Error::NonFinite { what: "gradient" });
    }
    Ok(Gradient { loss, grad })
}
